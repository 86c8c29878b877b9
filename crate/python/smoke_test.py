"""Smoke test for the certrelu_py extension. Run from the repository root."""

from fractions import Fraction
from pathlib import Path

import certrelu_py as cr

DATA = Path(__file__).resolve().parent.parent / "data"


def main():
    net = cr.Network.load(str(DATA / "toy.net"))
    phi = cr.Property.load(str(DATA / "phi.prop"))
    assert net.layers == [2, 1, 1, 1], net.layers
    assert net.evaluate([3, -1]) == ["0"]
    assert cr.evaluate(net, [Fraction(1), 2]) == net.evaluate(["1", "2"])

    q = cr.Query.encode(net, phi)
    assert len(q.var_names) == len(q.bounds)
    assert len(q.relus) == 2

    res = cr.verify(net, phi)
    assert res.verdict == "unsat", res
    report = res.proof.check(net, phi)
    assert report.accepted, report.to_json()
    assert all(status == "pass" for _, status, _ in report.leaves)

    # the proof survives a JSON round trip and still checks against its echo
    again = cr.Proof.from_json(res.proof.to_json())
    assert again.node_count == res.proof.node_count
    assert again.check().accepted

    sat = cr.verify(net, cr.Property.load(str(DATA / "sat.prop")))
    assert sat.verdict == "sat" and sat.witness == ["1", "2"], sat.witness

    flt = cr.verify(net, phi, mode="float")
    assert flt.verdict == "unsat"
    fixed, rep = flt.proof.repair()
    assert rep.accepted

    try:
        cr.Proof.from_json("{")
    except ValueError:
        pass
    else:
        raise AssertionError("truncated proof accepted")

    print("smoke test ok:", res, cr.PROOF_VERSION)


if __name__ == "__main__":
    main()
