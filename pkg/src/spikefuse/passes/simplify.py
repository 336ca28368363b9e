"""Peephole rewrites on the operator list, applied to a fixpoint."""

from __future__ import annotations

import numpy as np

from spikefuse.ir import Copy, DotInc, ElementwiseInc, Operator, Reset, SignalRef


def _constant_value(ref: SignalRef) -> np.ndarray | None:
    if not ref.signal.constant:
        return None
    return ref.initial_value()


def _rewrite(op: Operator) -> Operator | None | bool:
    """Return a replacement op, ``None`` to delete, or ``False`` for no change."""
    if isinstance(op, (ElementwiseInc, DotInc)):
        A = _constant_value(op.A)
        if A is not None and not A.any():
            return None
        if isinstance(op, ElementwiseInc) and A is not None and np.all(A == 1):
            return Copy(id=op.id, src=op.X, dst=op.Y, inc=True)
    elif isinstance(op, Copy) and not op.inc:
        value = _constant_value(op.src)
        if value is not None:
            return Reset(id=op.id, dst=op.dst, value=value)
    return False


def simplify(ops: list[Operator]) -> list[Operator]:
    """Apply the rewrites until nothing changes.

    * ``y += 1 * x``  ->  ``Copy(x -> y, inc)``
    * ``y = c`` copied from a constant signal  ->  ``Reset(y, c)``
    * ``y += 0 * x`` or ``y += 0 @ x``  ->  removed

    Rewritten operators keep their ids.
    """
    ops = list(ops)
    changed = True
    while changed:
        changed = False
        out = []
        for op in ops:
            new = _rewrite(op)
            if new is False:
                out.append(op)
                continue
            changed = True
            if new is not None:
                out.append(new)
        ops = out
    return ops
