"""Encoder / latent-dynamics / decoder forecaster with stage growth.

The encoder is a GRU stack over (value, delta-t) features, anchored at the
last observed time. Forecasting integrates the latent state forward from
that anchor; the reconstruction term of the training loss integrates the
reversed dynamics backward across the observed prefix from the same anchor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    _accum,
    _record,
    concat,
    constant,
    mean_all,
    neg,
    square,
    sub,
)
from .nets import DenseLayer, ProgressiveStack
from .ode import SolveSpec, integrate_offsets, integrate_path

CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


class FinalStageError(ModelError):
    """grow_stage called on a model already at its final stage."""


@dataclass
class ForecastRequest:
    """Observed prefix plus query times shared across the batch."""

    times: np.ndarray
    values: np.ndarray
    query_times: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_2d(np.asarray(self.times, dtype=np.float64))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.query_times = np.asarray(self.query_times, dtype=np.float64)
        if self.times.shape != self.values.shape:
            raise ModelError("times and values shapes differ")
        if self.times.shape[1] < 1:
            raise ModelError("need at least one observation")
        if np.any(np.diff(self.times, axis=1) <= 0):
            raise ModelError("observed times must be strictly increasing")
        if np.any(np.diff(self.query_times) <= 0):
            raise ModelError("query times must be strictly increasing")
        if self.query_times.size and np.any(
            self.query_times[0] < self.times[:, -1]
        ):
            raise ModelError("query times must start at or after the last observation")


class _FusedDynamics:
    """Dynamics callable with a single-node fused RK4 fast path.

    Calling it goes through the ordinary tape ops. The solver instead uses
    fused_step, which evaluates a whole RK4 step in plain numpy and records
    one tape node whose backward is the hand-derived adjoint of the step.
    Both paths compute the same function; the fused one just avoids ~30
    nodes of tape overhead per solver step. sign=-1 gives the reversed-time
    dynamics used by the reconstruction term.
    """

    def __init__(self, model, sign=1.0):
        self.model = model
        self.sign = float(sign)

    def __call__(self, z, t):
        out = self.model.dynamics_fn(z, t)
        return out if self.sign == 1.0 else neg(out)

    def _params(self):
        m = self.model
        ps = [m.dyn_in.W, m.dyn_in.b, m.dyn_out.W, m.dyn_out.b]
        for layer, a in zip(m.dynamics.groups, m.dynamics.alphas):
            if a != 0.0:
                ps.append(layer.W)
                ps.append(layer.b)
        return ps

    def _fwd(self, z):
        """Plain-numpy dynamics eval; returns (dz, cache for _bwd)."""
        m = self.model
        h0 = np.tanh(z @ m.dyn_in.W.array + m.dyn_in.b.array)
        h = h0
        recs = []
        for layer, a in zip(m.dynamics.groups, m.dynamics.alphas):
            if a == 0.0:
                continue
            g = np.tanh(h @ layer.W.array + layer.b.array)
            recs.append((h, g, layer, a))
            h = g if a == 1.0 else (1.0 - a) * h + a * g
        out = h @ m.dyn_out.W.array + m.dyn_out.b.array
        if self.sign != 1.0:
            out = self.sign * out
        return out, (z, h0, recs, h)

    def _bwd(self, gout, cache):
        """Adjoint of _fwd: accumulates parameter grads, returns grad wrt z."""
        m = self.model
        z, h0, recs, h_last = cache
        if self.sign != 1.0:
            gout = self.sign * gout
        m.dyn_out.W.grad += h_last.T @ gout
        m.dyn_out.b.grad += gout.sum(axis=0)
        gh = gout @ m.dyn_out.W.array.T
        for h_in, g, layer, a in reversed(recs):
            gg = gh if a == 1.0 else a * gh
            gp = gg * (1.0 - g * g)
            layer.W.grad += h_in.T @ gp
            layer.b.grad += gp.sum(axis=0)
            gnext = gp @ layer.W.array.T
            gh = gnext if a == 1.0 else gnext + (1.0 - a) * gh
        gp0 = gh * (1.0 - h0 * h0)
        m.dyn_in.W.grad += z.T @ gp0
        m.dyn_in.b.grad += gp0.sum(axis=0)
        return gp0 @ m.dyn_in.W.array.T

    def fused_step(self, z, t, h):
        ha = h if np.isscalar(h) else np.asarray(h)
        za = z.array
        k1, c1 = self._fwd(za)
        k2, c2 = self._fwd(za + (0.5 * ha) * k1)
        k3, c3 = self._fwd(za + (0.5 * ha) * k2)
        k4, c4 = self._fwd(za + ha * k3)
        arr = za + (ha / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        def backward(gout):
            h6 = ha / 6.0
            gy4 = self._bwd(h6 * gout, c4)
            gy3 = self._bwd(2.0 * h6 * gout + ha * gy4, c3)
            gy2 = self._bwd(2.0 * h6 * gout + (0.5 * ha) * gy3, c2)
            gy1 = self._bwd(h6 * gout + (0.5 * ha) * gy2, c1)
            _accum(z, gout + gy1 + gy2 + gy3 + gy4)

        return _record(arr, (z, *self._params()), backward)


class LatentOdeModel:
    """Latent ODE forecaster whose three stacks grow in lockstep."""

    def __init__(self, seed=0, k_max=3, gru_width=64, net_width=32,
                 d_latent=16, max_step=0.05, initial_groups=1,
                 new_group_scale=0.1, _build=True):
        self.k_max = int(k_max)
        self.gru_width = int(gru_width)
        self.net_width = int(net_width)
        self.d_latent = int(d_latent)
        self.solve_spec = SolveSpec(max_step=max_step)
        self.new_group_scale = float(new_group_scale)
        self.seed = int(seed)
        if not (1 <= initial_groups <= self.k_max):
            raise ModelError("initial_groups must be in [1, k_max]")
        if not _build:
            return
        rng = np.random.default_rng(seed)
        self._rng = rng
        self.encoder = ProgressiveStack(rng, "gru", 2, self.gru_width, "encoder")
        self.z0_proj = DenseLayer(rng, self.gru_width, self.d_latent,
                                  "identity", "z0_proj")
        self.dyn_in = DenseLayer(rng, self.d_latent, self.net_width,
                                 "tanh", "dyn_in")
        self.dynamics = ProgressiveStack(rng, "dense", self.net_width,
                                         self.net_width, "dynamics")
        self.dyn_out = DenseLayer(rng, self.net_width, self.d_latent,
                                  "identity", "dyn_out")
        self.decoder = ProgressiveStack(rng, "dense", self.d_latent,
                                        self.net_width, "decoder")
        self.head = DenseLayer(rng, self.net_width, 1, "identity", "head")
        self.stage = 1
        self._fwd_dynamics = _FusedDynamics(self, sign=1.0)
        self._rev_dynamics = _FusedDynamics(self, sign=-1.0)
        for _ in range(initial_groups - 1):
            self.grow_stage()
            self.set_blend_alpha(1.0)

    # -- structure ----------------------------------------------------------

    def parameters(self):
        params = []
        params.extend(self.encoder.parameters())
        params.extend(self.z0_proj.parameters())
        params.extend(self.dyn_in.parameters())
        params.extend(self.dynamics.parameters())
        params.extend(self.dyn_out.parameters())
        params.extend(self.decoder.parameters())
        params.extend(self.head.parameters())
        return params

    def grow_stage(self):
        """Add one alpha=0 group to all three stacks; outputs are unchanged."""
        if self.stage >= self.k_max:
            raise FinalStageError(f"model already at final stage {self.k_max}")
        self.stage += 1
        for stack in (self.encoder, self.dynamics, self.decoder):
            stack.add_group(self._rng, self.new_group_scale, stage=self.stage)

    def set_blend_alpha(self, alpha):
        """Blend weight for the newest group of every stack."""
        for stack in (self.encoder, self.dynamics, self.decoder):
            stack.set_last_alpha(alpha)

    # -- forward ------------------------------------------------------------

    def _h0(self, batch):
        return lambda width: constant(np.zeros((batch, width)))

    def encode(self, times, values):
        """z0 from the observed prefix, anchored at the last observed time.

        times/values are [batch, n] arrays; features per step are the value
        and the time gap to the previous observation (zero for the first).
        """
        times = np.atleast_2d(np.asarray(times, dtype=np.float64))
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if times.shape[1] < 1:
            raise ModelError("encode needs at least one observation")
        deltas = np.zeros_like(times)
        deltas[:, 1:] = np.diff(times, axis=1)
        feats = [
            constant(np.stack([values[:, j], deltas[:, j]], axis=1))
            for j in range(times.shape[1])
        ]
        _, final = self.encoder.forward_sequence(feats, self._h0(times.shape[0]))
        return self.z0_proj(final)

    def dynamics_fn(self, z, t):
        h = self.dyn_in(z)
        h = self.dynamics.forward(h)
        return self.dyn_out(h)

    def decode(self, latent):
        return self.head(self.decoder.forward(latent))

    def _decode_path(self, latents):
        """Decode a list of [batch, d] latents in one fused pass -> [m*batch, 1]."""
        stacked = latents[0] if len(latents) == 1 else concat(latents, axis=0)
        return self.decode(stacked)

    def forecast_node(self, request):
        """Flat prediction node [m*batch, 1]; keeps gradients flowing."""
        req = request
        z0 = self.encode(req.times, req.values)
        t_last = float(req.times[0, -1])
        if np.any(req.times[:, -1] != t_last):
            # mixed anchors need the batched loss path, not the shared-grid API
            raise ModelError("forecast requires a shared last observed time")
        query = list(np.asarray(req.query_times, dtype=np.float64))
        latents = integrate_path(self._fwd_dynamics, z0, t_last, query,
                                 self.solve_spec)
        return self._decode_path(latents)

    def forecast(self, request):
        """Predicted values at the request's query times, shape [batch, m]."""
        out = self.forecast_node(request)
        m = len(request.query_times)
        batch = request.times.shape[0]
        return np.transpose(out.array.reshape(m, batch))

    # -- loss ---------------------------------------------------------------

    def predict_batch(self, times, values, split):
        """Reconstruction and forecast predictions for a ragged-time batch.

        Returns (pred Tensor [(m_r + m_f) * batch, 1], target ndarray of the
        same shape, m_recon, m_forecast). Reconstruction targets are the
        observed values after the first, visited backward in time from the
        anchor; forecast targets are the held-out half.
        """
        times = np.atleast_2d(np.asarray(times, dtype=np.float64))
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        batch, n = times.shape
        if not (0 < split < n):
            raise ModelError(f"split {split} out of range for length {n}")
        z0 = self.encode(times[:, :split], values[:, :split])
        t_last = times[:, split - 1]

        # backward across the observed prefix: offsets s_j = t_last - t_(split-1-j)
        # for j = 0 .. split-2, i.e. every observed point except the first
        recon_offsets = (t_last[:, None] - times[:, split - 1::-1])[:, : split - 1]
        recon_latents = integrate_offsets(self._rev_dynamics, z0, recon_offsets,
                                          self.solve_spec)
        recon_targets = values[:, split - 1:0:-1].T  # [m_r, batch]

        fc_offsets = times[:, split:] - t_last[:, None]
        fc_latents = integrate_offsets(self._fwd_dynamics, z0, fc_offsets,
                                       self.solve_spec)
        fc_targets = values[:, split:].T  # [m_f, batch]

        pred = self._decode_path(recon_latents + fc_latents)
        targets = np.concatenate([recon_targets, fc_targets], axis=0).reshape(-1, 1)
        return pred, targets, recon_offsets.shape[1], fc_offsets.shape[1]

    def loss(self, times, values, split):
        """Scalar MSE over reconstruction and forecast points, equally weighted."""
        pred, targets, _, _ = self.predict_batch(times, values, split)
        return mean_all(square(sub(pred, constant(targets))))

    def forecast_values(self, times, values, split):
        """Forecast-half predictions only, as a [batch, m_f] ndarray (no grads)."""
        times = np.atleast_2d(np.asarray(times, dtype=np.float64))
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        batch, n = times.shape
        z0 = self.encode(times[:, :split], values[:, :split])
        t_last = times[:, split - 1]
        fc_offsets = times[:, split:] - t_last[:, None]
        latents = integrate_offsets(self._fwd_dynamics, z0, fc_offsets,
                                    self.solve_spec)
        out = self._decode_path(latents)
        m = fc_offsets.shape[1]
        return np.transpose(out.array.reshape(m, batch))

    # -- checkpointing ------------------------------------------------------

    def save(self, path):
        params = {
            p.name: {"shape": list(p.array.shape),
                     "data": p.array.reshape(-1).tolist(),
                     "stage": p.stage_of_birth}
            for p in self.parameters()
        }
        blob = {
            "format_version": CHECKPOINT_VERSION,
            "stage": self.stage,
            "k_max": self.k_max,
            "seed": self.seed,
            "gru_width": self.gru_width,
            "net_width": self.net_width,
            "d_latent": self.d_latent,
            "max_step": self.solve_spec.max_step,
            "new_group_scale": self.new_group_scale,
            "alphas": {
                "encoder": self.encoder.alphas,
                "dynamics": self.dynamics.alphas,
                "decoder": self.decoder.alphas,
            },
            "params": params,
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version in {path}")
        model = cls(seed=blob["seed"], k_max=blob["k_max"],
                    gru_width=blob["gru_width"], net_width=blob["net_width"],
                    d_latent=blob["d_latent"], max_step=blob["max_step"],
                    new_group_scale=blob.get("new_group_scale", 0.1),
                    initial_groups=blob["stage"])
        model.stage = blob["stage"]
        for stack_name, stack in (("encoder", model.encoder),
                                  ("dynamics", model.dynamics),
                                  ("decoder", model.decoder)):
            for i, a in enumerate(blob["alphas"][stack_name]):
                stack.alphas[i] = float(a)
        by_name = {p.name: p for p in model.parameters()}
        if set(by_name) != set(blob["params"]):
            raise ModelError("checkpoint parameter names do not match the model")
        for name, rec in blob["params"].items():
            p = by_name[name]
            arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
            if arr.shape != p.array.shape:
                raise ModelError(f"checkpoint shape mismatch for {name}")
            p.array = arr
            p.grad = np.zeros_like(arr)
            p.stage_of_birth = rec.get("stage", 1)
        return model
