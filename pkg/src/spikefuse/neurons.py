"""Neuron models: static rate curves, parameter solving, and per-step dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NeuronParameterError(ValueError):
    pass


def lif_rate(J, tau_rc: float = 0.02, tau_ref: float = 0.002):
    """Steady-state LIF firing rate (Hz) for input current ``J``.

    Zero at or below the threshold current of 1, otherwise
    ``1 / (tau_ref + tau_rc * ln(1 + 1/(J - 1)))``.
    """
    J = np.asarray(J, dtype=float)
    out = np.zeros_like(J)
    above = J > 1
    out[above] = 1.0 / (tau_ref + tau_rc * np.log1p(1.0 / (J[above] - 1)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LIF:
    """Spiking leaky integrate-and-fire neurons.

    Each spike is emitted as a single-step pulse of height ``amplitude / dt``.
    State is ``(voltage, refractory_time)``.
    """

    tau_rc: float = 0.02
    tau_ref: float = 0.002
    amplitude: float = 1.0

    n_states = 2
    spiking = True

    def rates(self, J):
        return self.amplitude * lif_rate(J, self.tau_rc, self.tau_ref)

    def gain_bias(self, max_rates, intercepts):
        return _lif_gain_bias(max_rates, intercepts, self.tau_rc, self.tau_ref)

    def step(self, dt, J, voltage, refractory_time):
        # refractory_time holds the time still to be spent refractory at the
        # start of this step; neurons leaving refractoriness mid-step integrate
        # for the remaining fraction of dt
        delta_t = np.clip(dt - refractory_time, 0, dt)
        voltage = voltage - (J - voltage) * np.expm1(-delta_t / self.tau_rc)

        spiked = voltage > 1
        output = spiked * (self.amplitude / dt)

        refractory_time = refractory_time - dt
        if spiked.any():
            # time elapsed between the threshold crossing and the end of the step
            overshoot = -self.tau_rc * np.log1p(
                -(voltage[spiked] - 1) / (J[spiked] - 1)
            )
            refractory_time[spiked] = self.tau_ref - overshoot
        voltage = np.where(voltage < 0, 0, voltage)
        voltage[spiked] = 0
        return output.astype(J.dtype, copy=False), voltage, refractory_time


@dataclass(frozen=True)
class LIFRate:
    """Rate-mode LIF: outputs ``amplitude * lif_rate(J)`` each step."""

    tau_rc: float = 0.02
    tau_ref: float = 0.002
    amplitude: float = 1.0

    n_states = 0
    spiking = False

    def rates(self, J):
        return self.amplitude * lif_rate(J, self.tau_rc, self.tau_ref)

    def gain_bias(self, max_rates, intercepts):
        return _lif_gain_bias(max_rates, intercepts, self.tau_rc, self.tau_ref)

    def step(self, dt, J):
        J = np.asarray(J)
        out = np.zeros_like(J)
        above = J > 1
        out[above] = self.amplitude / (
            self.tau_ref + self.tau_rc * np.log1p(1 / (J[above] - 1))
        )
        return (out,)


@dataclass(frozen=True)
class RectifiedLinear:
    amplitude: float = 1.0

    n_states = 0
    spiking = False

    def rates(self, J):
        return self.amplitude * np.maximum(np.asarray(J, dtype=float), 0)

    def gain_bias(self, max_rates, intercepts):
        max_rates = np.asarray(max_rates, dtype=float)
        intercepts = np.asarray(intercepts, dtype=float)
        gain = max_rates / (1 - intercepts)
        bias = -gain * intercepts
        return gain, bias

    def step(self, dt, J):
        return (self.amplitude * np.maximum(J, 0),)


NeuronModel = LIF | LIFRate | RectifiedLinear


def _lif_gain_bias(max_rates, intercepts, tau_rc, tau_ref):
    max_rates = np.asarray(max_rates, dtype=float)
    intercepts = np.asarray(intercepts, dtype=float)
    if np.any(max_rates <= 0) or np.any(max_rates >= 1.0 / tau_ref):
        raise NeuronParameterError(
            f"max rates must lie in (0, {1.0 / tau_ref:g}) Hz for tau_ref={tau_ref}"
        )
    if np.any(intercepts < -1) or np.any(intercepts >= 1):
        raise NeuronParameterError("intercepts must lie in [-1, 1)")
    z = 1.0 / (1.0 - np.exp((tau_ref - 1.0 / max_rates) / tau_rc))
    gain = (z - 1) / (1 - intercepts)
    bias = 1 - gain * intercepts
    # rounding can leave the intercept current one ulp above threshold, where
    # the log-shaped rate curve is already well above zero
    over = gain * intercepts + bias > 1
    while np.any(over):
        bias = np.where(over, np.nextafter(bias, -np.inf), bias)
        over = gain * intercepts + bias > 1
    return gain, bias


def gain_bias(max_rate, intercept, neuron_model: NeuronModel = LIF()):
    """Gain and bias that place a neuron's threshold at ``intercept`` and its
    rate at ``max_rate`` for a represented value of 1."""
    return neuron_model.gain_bias(max_rate, intercept)
