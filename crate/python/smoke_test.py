"""Smoke test for the `srsr` Python module.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import math
import tempfile
from pathlib import Path

import srsr


def main():
    a = [[2.0 + 0j, 0.5 + 0.1j], [0.5 - 0.1j, 1.0 + 0j]]
    b = [[1.0 + 0j, 0j], [0j, 3.0 + 0j]]
    d = srsr.airm_distance(a, b)
    assert math.isclose(d, srsr.airm_distance(b, a), rel_tol=1e-12)
    assert srsr.airm_distance(a, a) < 1e-12

    log_b = srsr.hpd_log(b)
    assert math.isclose(log_b[1][1].real, math.log(3.0), rel_tol=1e-12)

    code = srsr.encode(a, [a, b], lam=0.1, step=0.05, iterations=2000)
    assert len(code) == 2 and all(c >= 0 for c in code)
    assert code[0] > code[1]

    m = srsr.metrics([[40, 10], [20, 30]])
    assert m["oa"] == 0.7 and m["kappa"] == 0.4

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        files = srsr.generate(str(tmp / "scene"), height=48, width=48, seed=3)
        h, w, labels = srsr.load_labels(files["labels"])
        assert (h, w) == (48, 48) and set(labels) == {1, 2, 3}

        cfg = srsr.Config()
        for key, value in {
            "covariance": str(files["covariance"]),
            "labels": str(files["labels"]),
            "output": str(tmp / "out"),
            "scale": "36",
            "atoms_per_class": "4",
            "epochs": "3",
        }.items():
            cfg.set(key, value)
        out = srsr.run(cfg)
        assert 0.0 <= out["oa"] <= 1.0
        assert len(out["prediction"]) == 48 * 48
        assert len(out["layer_objectives"]) == 5
        assert (tmp / "out" / "metrics.csv").exists()
        print(f"pipeline OA {out['oa']:.4f}, kappa {out['kappa']:.4f}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
