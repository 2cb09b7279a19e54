"""Dense and GRU layers plus the progressively grown layer stack.

A ProgressiveStack is an ordered list of layer groups with a blend weight
alpha per group. Group 0 is the base and always fully active; a newly added
group enters at alpha = 0 (exact passthrough) and is ramped toward 1 by the
training schedule.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, ShapeMismatchError, affine, blend, gru_cell

DENSE_ACTIVATIONS = ("tanh", "relu", "identity")


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


class DenseLayer:
    """activation(x @ W + b)."""

    def __init__(self, rng, n_in, n_out, activation="tanh", name="dense",
                 init_scale=None, stage=1):
        if activation not in DENSE_ACTIVATIONS:
            raise ValueError(f"unsupported activation {activation!r}")
        scale = init_scale if init_scale is not None else 1.0 / np.sqrt(n_in)
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.W = Parameter(_uniform(rng, (n_in, n_out), scale), f"{name}.W", stage)
        self.b = Parameter(np.zeros(n_out), f"{name}.b", stage)

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatchError("dense_forward", x.shape, (self.n_in, self.n_out))
        return affine(x, self.W, self.b, self.activation)

    def parameters(self):
        return [self.W, self.b]


def dense_forward(layer, x):
    return layer(x)


class GruLayer:
    """Single GRU layer; gate order in the packed matrices is (z, r, n).

    Convention: h' = z * h + (1 - z) * n, so with all-zero weights the update
    gate sits at 0.5 and the hidden state halves each step.
    """

    def __init__(self, rng, n_in, hidden, name="gru", init_scale=None, stage=1):
        scale_x = init_scale if init_scale is not None else 1.0 / np.sqrt(n_in)
        scale_h = init_scale if init_scale is not None else 1.0 / np.sqrt(hidden)
        self.n_in = n_in
        self.hidden = hidden
        self.Wx = Parameter(_uniform(rng, (n_in, 3 * hidden), scale_x),
                            f"{name}.Wx", stage)
        self.Wh = Parameter(_uniform(rng, (hidden, 3 * hidden), scale_h),
                            f"{name}.Wh", stage)
        self.b = Parameter(np.zeros(3 * hidden), f"{name}.b", stage)

    def step(self, x, h):
        return gru_cell(x, h, self.Wx, self.Wh, self.b)

    def parameters(self):
        return [self.Wx, self.Wh, self.b]


def gru_forward(layer, inputs, h0):
    """Run a GRU over a sequence; returns (list of hidden states, final state).

    An empty input sequence yields an empty list and final state h0.
    """
    h = h0
    states = []
    for x in inputs:
        if x.shape[0] != h.shape[0] or x.shape[-1] != layer.n_in:
            raise ShapeMismatchError("gru_forward", x.shape, (h.shape[0], layer.n_in))
        h = layer.step(x, h)
        states.append(h)
    return states, h


class ProgressiveStack:
    """Ordered layer groups with per-group blend weights.

    kind is "dense" or "gru". Group 0 maps the input width to the stack
    width; every later group maps width -> width so the blend residual is
    well-typed. alphas[0] is pinned to 1.
    """

    def __init__(self, rng, kind, n_in, width, name, activation="tanh"):
        if kind not in ("dense", "gru"):
            raise ValueError(f"unknown stack kind {kind!r}")
        self.kind = kind
        self.width = width
        self.name = name
        self.activation = activation
        self._rng_unused = None
        first = self._make_layer(rng, n_in, width, 0, None, 1)
        self.groups = [first]
        self.alphas = [1.0]

    def _make_layer(self, rng, n_in, width, index, init_scale, stage):
        name = f"{self.name}.g{index}"
        if self.kind == "dense":
            return DenseLayer(rng, n_in, width, self.activation, name,
                              init_scale, stage)
        return GruLayer(rng, n_in, width, name, init_scale, stage)

    def add_group(self, rng, init_scale=0.1, stage=None):
        """Append a width->width group at alpha = 0; existing weights untouched."""
        index = len(self.groups)
        stage = stage if stage is not None else index + 1
        layer = self._make_layer(rng, self.width, self.width, index,
                                 init_scale, stage)
        self.groups.append(layer)
        self.alphas.append(0.0)

    def set_alpha(self, group_index, alpha):
        if not (1 <= group_index < len(self.groups)):
            raise IndexError(f"no blendable group {group_index}")
        if not (0.0 <= alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        self.alphas[group_index] = float(alpha)

    def set_last_alpha(self, alpha):
        if len(self.groups) > 1:
            self.set_alpha(len(self.groups) - 1, alpha)

    def forward(self, x):
        """Dense stacks only: blend each group into the running hidden state."""
        if self.kind != "dense":
            raise TypeError("forward() is for dense stacks; use forward_sequence")
        h = self.groups[0](x)
        for layer, a in zip(self.groups[1:], self.alphas[1:]):
            if a == 0.0:
                continue
            g = layer(h)
            h = g if a == 1.0 else blend(h, g, a)
        return h

    def forward_sequence(self, inputs, h0_factory):
        """GRU stacks: blend applies per time step to the hidden sequence.

        h0_factory(width) builds the initial hidden state for each group
        (fresh zeros per group in practice). Returns (states, final state).
        """
        if self.kind != "gru":
            raise TypeError("forward_sequence() is for gru stacks")
        states, final = gru_forward(self.groups[0], inputs, h0_factory(self.width))
        for layer, a in zip(self.groups[1:], self.alphas[1:]):
            if a == 0.0:
                continue
            new_states, new_final = gru_forward(layer, states, h0_factory(self.width))
            if a == 1.0:
                states, final = new_states, new_final
            else:
                states = [blend(s, g, a) for s, g in zip(states, new_states)]
                final = states[-1] if states else final
        return states, final

    def parameters(self):
        out = []
        for g in self.groups:
            out.extend(g.parameters())
        return out


def stack_forward(stack, x, h0_factory=None):
    """Uniform entry point: tensor in for dense stacks, sequence for GRU."""
    if stack.kind == "dense":
        return stack.forward(x)
    return stack.forward_sequence(x, h0_factory)
