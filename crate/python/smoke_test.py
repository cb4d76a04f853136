"""Smoke test for the histotile extension module.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/histotile-*.whl
"""

import json
import random
import tempfile

import histotile


def main():
    assert histotile.axis_offsets(700) == [0, 138, 275, 413, 550]
    assert len(histotile.patch_grid(700, 460)) == 15
    assert histotile.otsu_threshold([10] * 12 + [200] * 4) == 10

    h = histotile.tas_histogram(3, 3, [True] * 9)
    assert abs(h[3] - 4 / 9) < 1e-12 and abs(h[8] - 1 / 9) < 1e-12

    rng = random.Random(0)
    rgb = [rng.randrange(256) for _ in range(32 * 32 * 3)]
    v = histotile.pftas(32, 32, rgb)
    assert len(v) == histotile.PFTAS_LEN == 162
    assert all(0.0 <= x <= 1.0 for x in v)

    spec = histotile.filter_spec(1)
    assert spec[0] == ("T", 625, True)
    assert sum(n for _, n, relevant in spec if not relevant) == 623

    assert histotile.aggregate_image([0.9, 0.9, 0.1], "sum")
    assert not histotile.aggregate_image([0.9, 0.2, 0.3], "vote")
    assert histotile.aggregate_image([0.8, 0.4], "vote")
    assert histotile.patient_score([True] * 8 + [False] * 2) == 0.8
    assert histotile.overall_accuracy([1.0, 0.5]) == 75.0

    rows, labels = [], []
    for i in range(60):
        positive = i % 2 == 0
        rows.append([(3.0 if positive else -3.0) + rng.gauss(0, 1), rng.gauss(0, 1)])
        labels.append(positive)
    c, gamma, acc = histotile.grid_search(rows, labels, grid=[(1.0, 0.5), (8.0, 0.125)])
    assert acc >= 0.95, acc
    clf = histotile.Classifier.train(rows, labels, c=c, gamma=gamma, seed=1)
    assert clf.predict([4.0, 0.0]) and not clf.predict([-4.0, 0.0])
    assert 0.0 < clf.predict_proba([0.0, 0.0]) < 1.0
    assert max(clf.kkt_residuals(rows, labels)) <= 1e-3
    again = histotile.Classifier.from_json(clf.to_json())
    assert json.loads(again.to_json()) == json.loads(clf.to_json())

    pca = histotile.Pca.fit([[float(i), 2.0 * i] for i in range(10)], 1)
    assert abs(pca.explained_variance_ratio() - 1.0) < 1e-9
    z = pca.transform([3.0, 6.0])
    assert all(abs(a - b) < 1e-9 for a, b in zip(pca.reconstruct(z), [3.0, 6.0]))

    with tempfile.TemporaryDirectory() as d:
        n = histotile.generate_synthetic_corpus(d, patients_per_class=2, images_per_patient=1, seed=3)
        assert histotile.scan_corpus(d, "synthetic") == (n, 4)

    try:
        histotile.filter_spec(9)
    except ValueError:
        pass
    else:
        raise AssertionError("filter 9 accepted")

    print("histotile smoke test passed")


if __name__ == "__main__":
    main()
