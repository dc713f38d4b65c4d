"""Smoke test for the `crv` extension module.

Build and install first, e.g. `maturin develop --release -m crates/py/Cargo.toml`.
"""

import json

import crv


def main():
    # f(x) = [relu(x), 0]: margin of class 1 against 0 is -relu(x).
    e1 = crv.Network([[1.0]], [0.0], [[1.0], [0.0]], [0.0, 0.0])
    assert e1.forward([2.0]) == [2.0, 0.0]
    assert abs(crv.lp_bound(e1, [1.0], 0.5, 0, 1, rule="parallel") + 0.5) < 1e-12
    assert abs(crv.lp_bound(e1, [0.0], 1.0, 0, 1, rule="parallel") - 0.5) < 1e-12
    assert crv.sdp_bound(e1, [0.0], 1.0, 0, 1, level=1) >= 1.0 - 1e-4

    net, points, labels = crv.generate(seed=3, d=2, m=5, classes=3, size=20)
    assert (net.input_dim, net.hidden_dim, net.num_classes) == (2, 5, 3)
    assert crv.Network.from_json(net.to_json()).to_json() == net.to_json()

    x, y = points[0], labels[0]
    for rival in (c for c in range(3) if c != y):
        exact, witness = crv.exact_margin(net, x, 0.1, y, rival)
        assert abs(net.margin(witness, y, rival) - exact) < 1e-9
        for bound in (crv.lp_bound(net, x, 0.1, y, rival), crv.sdp_bound(net, x, 0.1, y, rival)):
            assert bound >= exact - 1e-9, (bound, exact)

    # f(x) = [relu(x), relu(-x)]: x = 0.5 flips to class 1 within radius 1.
    flip = crv.Network([[1.0], [-1.0]], [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    hit, point, margin = crv.pgd(flip, [0.5], 1.0, 0)
    assert hit and flip.predict(point) == 1 and margin > 0.0

    report = json.loads(crv.crv_verify(net, points, labels, 0.1, attack=True, oracle=True))
    metrics = report["runs"][0]["metrics"]
    lo, hi = metrics["tra_interval"]
    assert lo <= metrics["oracle"]["true_robust_fraction"] <= hi
    print(f"ok: RA={metrics['ra']:.2f}, TRA in [{lo:.2f}, {hi:.2f}], {len(report['summary'])} summary rows")


if __name__ == "__main__":
    main()
