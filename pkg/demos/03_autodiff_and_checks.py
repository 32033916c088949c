"""The autodiff engine underneath, and the self-check suites.

A two-layer network is differentiated by hand-rolled reverse mode and
compared with central differences; then the same suites that
``gada verify`` runs are executed and printed.

Run: python3 demos/03_autodiff_and_checks.py
"""

import numpy as np

from gada.autodiff import Parameter, backward, finite_diff_check, matmul, relu, softmax, tsum
from gada.verify import run_suite

rng = np.random.default_rng(0)
w1 = Parameter(rng.normal(size=(4, 8)), name="w1")
w2 = Parameter(rng.normal(size=(8, 3)), name="w2")
x = rng.normal(size=(5, 4))
y = rng.dirichlet(np.ones(3), size=5)


def loss():
    p = softmax(matmul(relu(matmul(x, w1)), w2), axis=-1)
    return tsum((p - y) * (p - y))


grads = backward(loss())
print("loss", loss().item())
print("|dL/dw1|", np.linalg.norm(grads[w1]), " |dL/dw2|", np.linalg.norm(grads[w2]))
print("max relative error vs central differences:", finite_diff_check(loss, [w1, w2], max_coords=None))

print("\nself-checks:")
for r in run_suite("all"):
    print(" ", r.line())
