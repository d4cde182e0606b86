"""Warmup adaptation: dual-averaging step size and windowed diagonal metric."""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DualAveraging",
    "WindowedAdaptation",
    "adapt_step_size",
    "adapt_mass",
    "regularized_variance",
]


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` towards a target acceptance.

    The defaults ``gamma=0.05, t0=10, kappa=0.75`` and the shrinkage point
    ``mu = log(10 * step_size)`` follow common NUTS practice.
    """

    def __init__(self, step_size, target_accept=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        if not 0 < target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        self.delta = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.step_size = step_size

    def update(self, accept_stat):
        """Feed one acceptance statistic; returns the new step size."""
        self.counter += 1
        a = min(1.0, accept_stat) if math.isfinite(accept_stat) else 0.0
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        self.step_size = math.exp(x)
        return self.step_size

    @property
    def final_step_size(self):
        return math.exp(self.x_bar) if self.counter else self.step_size


def adapt_step_size(accept_history, target_accept=0.8, step_size=1.0):
    """Run dual averaging over a history of acceptance statistics.

    Returns the step size after the last update.
    """
    accept_history = list(accept_history)
    if not accept_history:
        raise ValueError("need at least one acceptance statistic")
    da = DualAveraging(step_size, target_accept)
    for a in accept_history:
        da.update(a)
    return da.step_size


def regularized_variance(var, n, shrink_to=1e-3):
    """Shrink a sample variance towards ``shrink_to`` with weight ``5/(n+5)``."""
    var = np.asarray(var, dtype=float)
    return (n / (n + 5.0)) * var + shrink_to * (5.0 / (n + 5.0))


def adapt_mass(window):
    """Inverse diagonal metric from a window of unconstrained draws ``(n, dim)``."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    n = window.shape[0]
    if n < 2:
        raise ValueError("need at least two draws in the window")
    return regularized_variance(window.var(axis=0, ddof=1), n)


class WindowedAdaptation:
    """Three-phase schedule: fast initial buffer, doubling slow windows, fast tail.

    Call :meth:`add` once per warmup iteration; it returns the updated inverse
    metric at the end of each slow window and ``None`` otherwise.
    """

    def __init__(self, num_warmup, dim, init_buffer=75, term_buffer=50, base_window=25):
        if num_warmup < init_buffer + term_buffer + base_window:
            raise ValueError(
                f"warmup of {num_warmup} is too short for windowed adaptation "
                f"(needs at least {init_buffer + term_buffer + base_window})")
        self.num_warmup = num_warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_size = base_window
        self.counter = 0
        self.next_window = init_buffer + base_window - 1
        self.dim = dim
        self._draws = []

    def in_window(self):
        c = self.counter
        return (c >= self.init_buffer and c < self.num_warmup - self.term_buffer
                and c != self.num_warmup)

    def end_of_window(self):
        return self.counter == self.next_window and self.counter != self.num_warmup

    def _compute_next_window(self):
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= last + 1:
            self.next_window = last

    def add(self, z):
        update = None
        if self.in_window():
            self._draws.append(np.array(z, dtype=float))
        if self.end_of_window():
            self._compute_next_window()
            update = adapt_mass(np.array(self._draws))
            self._draws = []
        self.counter += 1
        return update
