#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Pipeline stages behind the command line: collect, pretrain, teach, distill, eval, plot.

Every stage reads and writes artifacts below ``config["output_dir"]``::

    corpus/     episode_*.npy, index.json
    upstream/   encoder*.ckpt, projection*.ckpt, transformer*.ckpt, pretrain*.csv, drift*.csv, snapshots*/
    teach/      oracle.ckpt, teach.csv, teach_eval_*.csv
    distill/    student.ckpt, distill.csv, distill_eval_*.csv
    eval/       <policy>_episodes.csv, <policy>_report.csv, <policy>_trajectories.csv
    plots/      *.svg
    logs/       app.log, debug.log
    config.yaml effective configuration of the last stage
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from config import PROG_NAME, app_logger, debug_logger, model_config_hash, save_config
from core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from core.contrastive import Pretrainer
from core.corpus import SequenceCorpus, collect_corpus
from core.errors import ConfigError, PrerequisiteError
from core.metrics import MetricsReport, run_evaluation
from core.navsim import ArenaSettings, scripted_action
from core.plotting import plot_all
from core.trainers import ORACLE_FILE, STUDENT_FILE, OraclePolicy, StudentPolicy, load_encoder, train_oracle, train_student

STAGES = ("collect", "pretrain", "teach", "distill", "eval", "plot")

Progress = Optional[Callable[[int, int], None]]
StopFlag = Optional[Callable[[], bool]]


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "RunPaths":
        return cls(Path(config["output_dir"]))

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def upstream(self) -> Path:
        return self.root / "upstream"

    @property
    def teach(self) -> Path:
        return self.root / "teach"

    @property
    def distill(self) -> Path:
        return self.root / "distill"

    @property
    def eval(self) -> Path:
        return self.root / "eval"

    @property
    def config(self) -> Path:
        return self.root / "config.yaml"

    def upstream_checkpoint(self, component: str, mode: str) -> Path:
        suffix = "" if mode == "masked" else f"_{mode}"
        return self.upstream / f"{component}{suffix}.ckpt"


def _require(path: Path, what: str, command: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"{what} not found at {path}", command)
    return path


def _record_config(config: Dict[str, Any], paths: RunPaths) -> None:
    save_config(config, str(paths.config))


# --------------------------------------------------------------------------- stages

def collect(config: Dict[str, Any], on_progress: Progress = None) -> Dict[str, Any]:
    """Roll out the reference policies and store the frame corpus."""
    paths = RunPaths.from_config(config)
    _record_config(config, paths)
    corpus_cfg = config["corpus"]
    upstream = config["upstream"]
    corpus = collect_corpus(
        ArenaSettings.from_config(config["arena"]),
        corpus_cfg["policy_mix"],
        corpus_cfg["episodes"],
        config["seed"],
        upstream["frame_stack"],
        upstream["seq_len"],
        corpus_cfg["max_episode_frames"],
        on_progress=on_progress,
    )
    corpus.save(paths.corpus, meta={"seed": config["seed"], "policy_mix": corpus_cfg["policy_mix"]})
    counts = corpus.policy_counts()
    app_logger.info(f"Corpus: {len(corpus)} episodes, {corpus.num_stacks} stacks, policies {counts}")
    return {"episodes": len(corpus), "stacks": corpus.num_stacks, "policies": counts, "path": paths.corpus}


def pretrain(config: Dict[str, Any], on_progress: Progress = None, stop_flag: StopFlag = None) -> Dict[str, Any]:
    """Masked (or CURL) contrastive pretraining of the upstream encoder."""
    paths = RunPaths.from_config(config)
    upstream = config["upstream"]
    corpus = SequenceCorpus.load(paths.corpus, upstream["frame_stack"])
    if corpus.image_size != config["arena"]["image_size"]:
        raise ConfigError(f"corpus frames are {corpus.image_size}px, config asks arena.image_size="
                          f"{config['arena']['image_size']}; re-run `{PROG_NAME} collect`")
    _record_config(config, paths)
    config_hash = model_config_hash(config)
    trainer = Pretrainer(config, corpus, paths.upstream)
    summary = trainer.run(upstream["steps"], config_hash, on_progress=on_progress, stop_flag=stop_flag)
    written = {}
    for component, checkpoint in trainer.checkpoints(config_hash).items():
        written[component] = save_checkpoint(paths.upstream_checkpoint(component, trainer.mode), checkpoint)
    final = summary["final"]
    app_logger.info(f"Upstream checkpoints written to {paths.upstream} "
                    f"(retrieval accuracy {final.get('retrieval_acc')}, drift {final.get('drift')})")
    summary["checkpoints"] = written
    return summary


def _upstream_checkpoints(config: Dict[str, Any], paths: RunPaths,
                          force: bool) -> Tuple[Checkpoint, Optional[Checkpoint], Dict[str, str]]:
    mode = config["upstream"]["mode"]
    config_hash = model_config_hash(config)
    encoder_path = _require(paths.upstream_checkpoint("encoder", mode), "pretrained encoder", "pretrain")
    encoder = load_checkpoint(encoder_path, config_hash, force, component="encoder")
    files = {"encoder_checkpoint": encoder_path.name}
    projection = None
    if config["upstream"]["use_projection"]:
        projection_path = _require(paths.upstream_checkpoint("projection", mode), "pretrained projection head",
                                   "pretrain")
        projection = load_checkpoint(projection_path, config_hash, force, component="projection")
        files["projection_checkpoint"] = projection_path.name
    return encoder, projection, files


def teach(config: Dict[str, Any], on_progress: Progress = None, stop_flag: StopFlag = None) -> Dict[str, Any]:
    """Train the privileged oracle with PPO."""
    paths = RunPaths.from_config(config)
    _record_config(config, paths)
    return train_oracle(config, paths.teach, on_progress=on_progress, stop_flag=stop_flag)


def distill(config: Dict[str, Any], force: bool = False, on_progress: Progress = None,
            stop_flag: StopFlag = None) -> Dict[str, Any]:
    """Train the student on the frozen encoder with annealed oracle guidance."""
    paths = RunPaths.from_config(config)
    encoder, projection, files = _upstream_checkpoints(config, paths, force)
    oracle = None
    if config["distill"]["use_oracle"]:
        oracle_path = _require(paths.teach / ORACLE_FILE, "oracle checkpoint", "teach")
        oracle = load_checkpoint(oracle_path, model_config_hash(config), force, component="oracle")
    _record_config(config, paths)
    return train_student(config, paths.distill, encoder, projection, oracle, encoder_files=files,
                         on_progress=on_progress, stop_flag=stop_flag)


def evaluate(config: Dict[str, Any], policy_name: Optional[str] = None, force: bool = False,
             on_progress: Progress = None) -> MetricsReport:
    """Evaluate the student, the oracle or the scripted reference on the seeded evaluation episodes."""
    paths = RunPaths.from_config(config)
    policy_name = policy_name or config["eval"]["policy"]
    config_hash = model_config_hash(config)
    if policy_name == "student":
        encoder_ckpt, projection_ckpt, _ = _upstream_checkpoints(config, paths, force)
        student_path = _require(paths.distill / STUDENT_FILE, "student checkpoint", "distill")
        encoder, projection = load_encoder(config, encoder_ckpt, projection_ckpt)
        student = StudentPolicy.from_checkpoint(config, encoder, projection,
                                                load_checkpoint(student_path, config_hash, force, component="student"))
        act = student.act
    elif policy_name == "oracle":
        oracle_path = _require(paths.teach / ORACLE_FILE, "oracle checkpoint", "teach")
        oracle = OraclePolicy.from_checkpoint(config, load_checkpoint(oracle_path, config_hash, force,
                                                                      component="oracle"))
        act = oracle.act
    elif policy_name == "scripted":
        settings = ArenaSettings.from_config(config["arena"])

        def act(env):
            return scripted_action(env.state, env.arena, settings)
    else:
        raise ConfigError(f"unknown evaluation policy: {policy_name}")

    _record_config(config, paths)
    report = run_evaluation(config, act, paths.eval, policy_name, policy_name, on_progress=on_progress)
    debug_logger.debug(f"Evaluation report for {policy_name}: {report}")
    return report


def plot(config: Dict[str, Any]) -> Dict[str, Any]:
    """Render SVG figures from every CSV log found under the output directory."""
    paths = RunPaths.from_config(config)
    if not paths.root.exists():
        raise PrerequisiteError(f"output directory {paths.root} does not exist", "collect")
    return {"figures": plot_all(paths.root)}
