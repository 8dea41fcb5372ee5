#!/usr/bin/env python3
"""Paired per-seed comparison of the learned policy against the random
baseline on one run configuration, with one-sided sign tests."""
import logging
import os
import sys

import pandas as pd

from aeroorch.harness import aggregate, collect_runs, emit_outputs, load_config, sign_test

config_path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "configs", "single.yaml")
learned, baseline = "perfect", "random"
log_level = "info"

logging.getLogger().setLevel(logging.INFO if log_level == "info" else logging.WARNING)
config = load_config(config_path, policies=[learned, baseline])
records = collect_runs(config)
emit_outputs(aggregate(records), config.out, config)

per_seed = pd.DataFrame(
    [{"point": r.point, "policy": r.policy, "seed": r.seed, **r.metrics} for r in records]
).pivot_table(index=["point", "seed"], columns="policy")
per_seed.to_csv(os.path.join(config.out, "per_seed.csv"))

rows = []
for point, group in per_seed.groupby(level="point"):
    acc = group["acceptance_pct"]
    energy = group["energy_per_request"]
    rows.append(
        {
            "point": point,
            "acceptance_p": sign_test(acc[learned].tolist(), acc[baseline].tolist()),
            # lower energy is better
            "energy_p": sign_test(energy[baseline].tolist(), energy[learned].tolist()),
        }
    )
tests = pd.DataFrame(rows)
tests.to_csv(os.path.join(config.out, "sign_tests.csv"), index=False)
print(tests.to_string(index=False))
