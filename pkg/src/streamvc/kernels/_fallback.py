"""Pure numpy implementations of the hot kernels.

Both kernels take float32 inputs, accumulate in float64 and return float32,
mirroring the compiled backend so that either can serve as the other's oracle.
"""

import numpy as np

from ..errors import ContractViolation

MASK_NEG = -1e9


def conv1d_valid(x, w, b, dilation, stride):
    """Valid-mode 1D convolution.

    Args:
        x: ``[Cin, Tin]`` float32, already padded.
        w: ``[Cout, Cin, K]`` float32.
        b: ``[Cout]`` float32.

    Returns:
        ``[Cout, Tout]`` float32 with ``Tout = (Tin - dilation*(K-1) - 1)//stride + 1``.
    """
    cin, tin = x.shape
    cout, _, k = w.shape
    span = dilation * (k - 1)
    tout = (tin - span - 1) // stride + 1
    xd = x.astype(np.float64)
    cols = np.empty((cin, k, tout), dtype=np.float64)
    last = (tout - 1) * stride + 1
    for j in range(k):
        off = j * dilation
        cols[:, j, :] = xd[:, off : off + last : stride]
    y = w.reshape(cout, cin * k).astype(np.float64) @ cols.reshape(cin * k, tout)
    y += b.astype(np.float64)[:, None]
    return y.astype(np.float32)


def masked_softmax(scores, mask):
    """Row softmax of ``scores [H, Tq, Tk]`` (float64) with boolean ``mask [Tq, Tk]``.

    Masked positions receive an additive ``-1e9`` logit.
    """
    if not mask.any(axis=-1).all():
        raise ContractViolation("attention row with no visible key")
    s = scores + np.where(mask, 0.0, MASK_NEG)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)
