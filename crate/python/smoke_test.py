"""Smoke test for the mineplan Python extension.

Build and install first, e.g.

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/mineplan-*.whl
"""

import json
import math
import tempfile

import mineplan

SA = {
    "iterations": 1500,
    "moves_per_temperature": 100,
    "cooling_ratio": 0.9,
    "initial_acceptance_target": 0.8,
    "n_starts": 1,
}

CONFIG = {
    "seed": 11,
    "log_level": "warn",
    "experiment": {
        "n_realizations": 6,
        "replicates": 1,
        "deposit": {
            "dims": {"nx": 3, "ny": 3, "nz": 2},
            "capacities": {"mining": 60000.0, "sulfide_mill": 20000.0, "sulfide_heap_leach": 20000.0},
            "table_knots": 200,
        },
        "sa_baseline": SA,
        "pomdp": {"sa": SA, "initial_plan": SA},
    },
}


def main():
    cfg = mineplan.Config(json.dumps(CONFIG))
    deposit = mineplan.Deposit.generate(cfg)
    assert deposit.n_blocks == 18
    assert deposit.n_realizations == 6
    assert 0 <= deposit.truth_index < 6
    assert len(deposit.blocks()) == 18
    truth = deposit.truth()
    assert len(truth["cu"]) == 18 and min(truth["cu"]) >= 0.0

    with tempfile.TemporaryDirectory() as tmp:
        deposit.save(tmp)
        again = mineplan.Deposit.load(tmp, cfg)
        assert again.truth() == truth

    one = mineplan.run_oneshot(deposit)
    assert len(one["schedule"]) == 18
    assert math.isclose(one["realized"] * (1 + one["gap"]), one["expected"], rel_tol=1e-12)

    traj = mineplan.run_pomdp(deposit)
    assert len(traj["steps"]) == 18
    for step in traj["steps"]:
        b = step["action"]["block"]
        assert step["obs_cu"] == truth["cu"][b]
    assert math.isclose(sum(s["realized_discounted"] for s in traj["steps"]), traj["realized"], rel_tol=1e-9)
    assert mineplan.run_pomdp(deposit) == traj

    report = mineplan.run_experiment(cfg, alphas=[0.9, 1.0])
    assert len(report["cells"]) == 2

    members = [[x / 10.0] for x in range(-10, 11)]
    post = mineplan.esmda_update(members, [0], [0.5], [0.1], [4.0] * 4, seed=3)
    assert abs(sum(m[0] for m in post) / len(post) - 0.5) < 0.2

    assert mineplan.expectation_reality_gap(110.0, 100.0) == 0.1
    try:
        mineplan.Config('{"bogus": 1}')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    print("mineplan", mineplan.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
