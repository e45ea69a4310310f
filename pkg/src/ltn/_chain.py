"""Iteration driver shared by the Gibbs fitters: burn-in, thinning, checkpoints."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import io
from .errors import NumericalError, ValidationError


def run_chain(
    state,
    sweep: Callable,
    record: Callable,
    pack: Callable,
    unpack: Callable,
    rng: np.random.Generator,
    iterations: int,
    burnin: int,
    thin: int,
    run_dir=None,
    checkpoint_every: int = 1000,
    resume: bool = False,
    stop_after: int | None = None,
    progress: Callable | None = None,
    fingerprint: str = "",
):
    """Run ``sweep`` until ``iterations`` sweeps are done and collect draws.

    ``record(state)`` returns a dict of arrays saved for sweeps ``t > burnin``
    with ``(t - burnin) % thin == 0``.  ``pack``/``unpack`` convert the state
    to and from a flat dict of arrays for checkpointing.  With ``resume`` the
    chain restarts from ``run_dir``'s checkpoint and continues bit-identically.
    ``stop_after`` ends the call early (after checkpointing) once that many
    sweeps are complete; the returned draws are then partial.
    """
    if iterations <= burnin or burnin < 0 or thin < 1:
        raise ValidationError("need iterations > burnin >= 0 and thin >= 1")
    start = 0
    saved: dict[str, list] = {}
    saved_iter: list[int] = []
    if resume:
        if run_dir is None:
            raise ValidationError("resume requires a run directory")
        start, flat, rng, saved, extra = io.load_checkpoint(run_dir)
        if extra.get("fingerprint", fingerprint) != fingerprint:
            raise ValidationError("checkpoint was written for different data or configuration")
        state = unpack(flat, state)
        saved_iter = list(map(int, saved.pop("__iteration__", [])))

    end = iterations if stop_after is None else min(iterations, stop_after)
    for t in range(start + 1, end + 1):
        try:
            state = sweep(state, rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        if t > burnin and (t - burnin) % thin == 0:
            for k, v in record(state).items():
                saved.setdefault(k, []).append(np.array(v, dtype=float, copy=True))
            saved_iter.append(t)
        if run_dir is not None and checkpoint_every and (t % checkpoint_every == 0 or t == end):
            io.save_checkpoint(
                run_dir,
                t,
                pack(state),
                rng,
                {**saved, "__iteration__": np.array(saved_iter, dtype=float)},
                extra={"fingerprint": fingerprint},
            )
        if progress is not None and t % 100 == 0:
            progress(t, iterations)

    arrays = {k: np.array(v) for k, v in saved.items()}
    return state, io.PosteriorDraws(iteration=np.array(saved_iter, dtype=np.int64), arrays=arrays), rng
