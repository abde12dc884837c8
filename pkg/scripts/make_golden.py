"""Regenerate the dense-oracle golden file for the tiny instance at eps = 0.5."""

import json
import math
from pathlib import Path

from eotlab.blockmodel import ModelParams, SequenceOverride, build_model
from eotlab.schrodinger import aggregate_dense, dense_solve_oracle
from eotlab.sets import pair_classes

EPS = 0.5
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_tiny_eps0.5.json"


def main():
    model = build_model(ModelParams(a=0.1, kappa=0.5, b=1.0, N=2),
                        SequenceOverride(m=[2, 2], L=[1, 16]))
    dense = dense_solve_oracle(model, EPS)
    pc = pair_classes(model)
    totals = aggregate_dense(dense)
    doc = {
        "params": {"a": 0.1, "kappa": 0.5, "b": 1.0, "N": 2},
        "override": {"m": [2, 2], "L": [1, 16]},
        "eps": EPS,
        "labels": [list(x) for x in dense.labels],
        "logP": dense.logP.tolist(),
        "class_totals": {pc.key_str(c): float(totals[c]) for c in range(len(pc))},
        "class_log_pair_mass": {pc.key_str(c): math.log(totals[c] / pc.count[c])
                                for c in range(len(pc))},
    }
    OUT.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
