"""Smoke test for the compiled `fragility` extension module."""

import math
import random

import fragility


def main():
    rng = random.Random(0)
    rows, y = [], []
    for _ in range(400):
        a, b = rng.gauss(0, 1), rng.gauss(0, 1)
        rows.append([a, a + 0.01 * rng.gauss(0, 1), b])
        y.append(int(a - b + 0.3 * rng.gauss(0, 1) > 0))
    x = fragility.FeatureMatrix(rows, ["a", "a_near", "b"]).standardize()
    assert x.shape == (400, 3)

    vifs = fragility.vif(x)
    assert vifs[0] > 100 and vifs[1] > 100 and vifs[2] < 2, vifs
    report = fragility.audit_features(x)
    assert set(report["flagged"]["high_vif"]) == {"a", "a_near"}, report["flagged"]

    model = fragility.fit_logistic(x, y, epochs=20)
    metrics = model.evaluate(x, y)
    assert metrics["accuracy"] > 0.85, metrics
    assert fragility.Model.from_json(model.to_json()).weights == model.weights

    phi = fragility.linear_shap(model, x, [0.0, 0.0, 0.0])
    w = model.weights
    assert math.isclose(phi[0][0], w[0] * x.to_rows()[0][0], rel_tol=1e-12)

    ones = [[[1.0, 2.0, 3.0]] * 5] * 4
    assert fragility.fragility_scores(ones) == [0.0, 0.0, 0.0]
    assert fragility.kendall_tau([0, 1, 2, 3], [3, 2, 1, 0]) == -1.0

    clustered, names = fragility.caa_filter(phi, x, 0.85, "sum")
    assert sorted(map(sorted, names)) == [["a", "a_near"], ["b"]], names
    assert len(clustered[0]) == 2

    frag = fragility.bootstrap_fragility(x, [float(v) for v in y], x, resamples=3, epochs=5)
    assert len(frag["features"]) == 3

    sharp_model, penalties = fragility.train_sharp(x, y, lam=0.0, epochs=3)
    assert penalties == []
    plain = fragility.fit_logistic(x, y, epochs=3)
    assert sharp_model.weights == plain.weights

    check = fragility.theorem_check(n=4000, resamples=60)
    assert check["identity"]["passed"] and check["non_identifiability"]["passed"], check["identity"]
    print("smoke test passed; bound check passed =", check["bound"]["passed"])


if __name__ == "__main__":
    main()
