"""Smoke test for the conman extension module."""

import json
import os
import tempfile

import conman


def main():
    dep = conman.Deployment.generate(seed=1, n_cells=3, n_ues=8)
    assert (dep.n_cells, dep.n_ues) == (3, 8)
    assert conman.Deployment.from_json(dep.to_json()).to_json() == dep.to_json()

    baseline = dep.max_rsrp_assignment()
    assert len(baseline) == 8 and all(c is not None for c in baseline)
    m = dep.metrics(baseline)
    assert m["u_th"] > 0 and 0 < m["u_jain"] <= 1

    deps = [conman.Deployment.generate(seed=s, n_cells=3, n_ues=8) for s in range(20)]
    model, log = conman.train(deps, json.dumps({"seed": 2}))
    assert len(log) == 20 and {"return", "U_th", "loss_mean"} <= log[0].keys()

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        model.save(path)
        loaded = conman.GnnModel.load(path)
    assert loaded.to_json() == model.to_json()

    assoc = model.associate(dep)
    assert all(c is not None for c in assoc)

    cfg = {"n_cells_list": [3], "n_ues_list": [8], "n_eval_deployments": 5}
    summaries = conman.evaluate(model, json.dumps(cfg))
    assert [s["metric"] for s in summaries] == ["U_th", "U_cov", "U_Jain"]

    try:
        conman.Deployment.generate(seed=0, n_cells=0, n_ues=8)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok:", model, dep, {k: round(v, 3) for k, v in m.items()})


if __name__ == "__main__":
    main()
