#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

import config as config_module


def small_config(output_dir: str = "output", **sections) -> dict:
    """Validated config shrunk to a few seconds of work; ``sections`` override per section or top-level key."""
    raw = {
        "seed": 3,
        "output_dir": output_dir,
        "arena": {"image_size": 16, "max_steps": 40},
        "corpus": {"episodes": 4, "max_episode_frames": 12},
        "upstream": {
            "frame_stack": 2, "seq_len": 4, "latent_dim": 8, "ffn_mult": 2, "transformer_blocks": 1,
            "crop_size": 12, "batch_size": 2, "steps": 3, "warmup_steps": 2, "eval_interval": 2,
            "eval_batches": 1,
        },
        "policy": {"hidden": 16},
        "rl": {"horizon": 8, "batch_size": 8, "buffer_size": 16, "epochs": 1, "total_steps": 32, "n_envs": 2,
               "grad_chunk": 4},
        "decay": {"horizon": 20},
        "eval": {"episodes": 2},
    }
    for section, values in sections.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    return config_module.validate_config(raw)
