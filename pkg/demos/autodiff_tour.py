"""Tour of the tape-based autodiff core and the finite-difference harness.

Run with: python3 demos/autodiff_tour.py
"""

import numpy as np

from relground import autodiff as ad
from relground.autodiff import Tape, Tensor, use_tape
from relground.gradcheck import check_gradients, run_micro_gradcheck


def banner(text):
    print()
    print(f"== {text} ==")


def main():
    banner("a small graph, differentiated")
    w = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
    x = Tensor(np.array([1.0, 3.0]))
    with use_tape(Tape()):
        hidden = ad.tanh(ad.matmul(w, x))
        loss = ad.reduce_sum(hidden * hidden)
        ad.backward(loss)
    print(f"loss = {loss.item():.6f}")
    print("dloss/dw =")
    print(np.array2string(w.grad, precision=6))

    banner("softmax cross entropy, the stable way")
    logits = Tensor(np.array([2.0, -1.0, 3.0, 0.5]), requires_grad=True)
    with use_tape(Tape()):
        nll = ad.logsumexp(logits) - ad.pick(logits, 0)
        ad.backward(nll)
    print(f"nll = {nll.item():.6f} for target index 0")
    print(f"gradient = softmax - onehot = {np.array2string(logits.grad, precision=6)}")
    with use_tape(Tape()):
        # the max is subtracted inside, so extreme logits cannot overflow
        extreme = ad.logsumexp(Tensor(np.array([800.0, 0.0, -800.0])))
    print(f"logsumexp([800, 0, -800]) = {extreme.item():.1f}, still finite")

    banner("every op checked against finite differences")
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)

    def build():
        z = ad.matmul(a, b)
        return ad.reduce_sum(ad.l2_normalize(ad.sigmoid(z)) * z)

    report = check_gradients(build, {"a": a, "b": b})
    print(f"{report.n_entries} entries, max relative error {report.max_error:.3e}, "
          f"passed: {report.passed()}")

    banner("the full-model check used by the test suite")
    print("scoring a 4-candidate scene with 2 expressions at tiny dims...")
    report = run_micro_gradcheck()
    worst = sorted(report.per_param.items(), key=lambda kv: -kv[1])[:3]
    print(f"{report.n_entries} parameter entries, max relative error {report.max_error:.3e}")
    for name, err in worst:
        print(f"  {name:>24} {err:.3e}")
    print(f"within 1e-4 everywhere: {report.passed(1e-4)}")


if __name__ == "__main__":
    main()
