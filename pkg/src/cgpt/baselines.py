"""Reference forecasters: trend/remainder linear maps and a flat MLP."""

from __future__ import annotations

import numpy as np

from .layers import glorot_uniform, load_param_arrays
from .preprocessing import revin_normalize
from .tensor import Tensor, matmul, relu, reshape


def moving_average_matrix(l_ctx, kernel):
    """Matrix M with (x @ M) the centered moving average of x, edges replicated.

    Column i holds the averaging weights for output step i; indices that
    fall off either end are clamped, so their weight piles up on the edge
    sample exactly like padding the series with its first/last value.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and positive, got {kernel}")
    half = kernel // 2
    m = np.zeros((l_ctx, l_ctx))
    for i in range(l_ctx):
        for k in range(i - half, i + half + 1):
            m[min(max(k, 0), l_ctx - 1), i] += 1.0 / kernel
    return m


class DLinearModel:
    """Two affine maps over a trend/remainder split of the target history."""

    kind = "dlinear"

    def __init__(self, l_ctx, h_pred, kernel=25, seed=0):
        if l_ctx < 1 or h_pred < 1:
            raise ValueError(f"l_ctx and h_pred must be >= 1, got {l_ctx}, {h_pred}")
        self.l_ctx = l_ctx
        self.h_pred = h_pred
        self.kernel = kernel
        self._avg = Tensor(moving_average_matrix(l_ctx, kernel))
        rng = np.random.Generator(np.random.Philox(key=seed))
        self.params = {
            "trend.w": Tensor(glorot_uniform(rng, (l_ctx, h_pred)), requires_grad=True),
            "trend.b": Tensor(np.zeros(h_pred), requires_grad=True),
            "seasonal.w": Tensor(glorot_uniform(rng, (l_ctx, h_pred)), requires_grad=True),
            "seasonal.b": Tensor(np.zeros(h_pred), requires_grad=True),
        }

    def parameters(self):
        return dict(self.params)

    def load_arrays(self, arrays):
        load_param_arrays(self.params, arrays)

    def config_header(self):
        return {"kind": self.kind, "l_ctx": self.l_ctx, "h_pred": self.h_pred,
                "kernel": self.kernel}

    def decompose(self, series):
        """numpy helper: (batch, l_ctx) -> (trend, remainder)."""
        trend = series @ self._avg.data
        return trend, series - trend

    def forward(self, batch, revin=False):
        series = np.ascontiguousarray(batch.context[:, :, batch.target_channel])
        stats = None
        if revin:
            series, stats = revin_normalize(series)
        x = Tensor(series)
        trend = matmul(x, self._avg)
        remainder = x - trend
        p = self.params
        forecast = (matmul(trend, p["trend.w"]) + p["trend.b"]) \
            + (matmul(remainder, p["seasonal.w"]) + p["seasonal.b"])
        if revin:
            forecast = forecast * Tensor(stats.stdev) + Tensor(stats.mean)
        return forecast


class MlpBaseline:
    """Flatten every channel's history into one vector and regress the horizon.

    The input width is bound to ``n_vars`` at construction; feeding a batch
    with a different channel count is an error rather than a silent reshape.
    """

    kind = "mlp"

    def __init__(self, l_ctx, h_pred, n_vars, hidden=512, seed=0):
        if min(l_ctx, h_pred, n_vars, hidden) < 1:
            raise ValueError("all MLP dimensions must be >= 1")
        self.l_ctx = l_ctx
        self.h_pred = h_pred
        self.n_vars = n_vars
        self.hidden = hidden
        rng = np.random.Generator(np.random.Philox(key=seed))
        width = l_ctx * n_vars
        self.params = {
            "fc1.w": Tensor(glorot_uniform(rng, (width, hidden)), requires_grad=True),
            "fc1.b": Tensor(np.zeros(hidden), requires_grad=True),
            "fc2.w": Tensor(glorot_uniform(rng, (hidden, hidden)), requires_grad=True),
            "fc2.b": Tensor(np.zeros(hidden), requires_grad=True),
            "out.w": Tensor(glorot_uniform(rng, (hidden, h_pred)), requires_grad=True),
            "out.b": Tensor(np.zeros(h_pred), requires_grad=True),
        }

    def parameters(self):
        return dict(self.params)

    def load_arrays(self, arrays):
        load_param_arrays(self.params, arrays)

    def config_header(self):
        return {"kind": self.kind, "l_ctx": self.l_ctx, "h_pred": self.h_pred,
                "n_vars": self.n_vars, "hidden": self.hidden}

    def forward(self, batch, revin=False):
        context = batch.context
        if context.shape[2] != self.n_vars:
            raise ValueError(
                f"model was built for {self.n_vars} channels, batch has {context.shape[2]}")
        stats = None
        if revin:
            # normalize each channel per window; remember the target's stats
            stacked, all_stats = revin_normalize(context.transpose(0, 2, 1))
            context = stacked.transpose(0, 2, 1)
            stats_mean = all_stats.mean[:, batch.target_channel, :]
            stats_stdev = all_stats.stdev[:, batch.target_channel, :]
            stats = (stats_mean, stats_stdev)
        # row-major flatten: time-major order, channels fastest
        flat = reshape(Tensor(context), (context.shape[0], self.l_ctx * self.n_vars))
        p = self.params
        h = relu(matmul(flat, p["fc1.w"]) + p["fc1.b"])
        h = relu(matmul(h, p["fc2.w"]) + p["fc2.b"])
        forecast = matmul(h, p["out.w"]) + p["out.b"]
        if revin:
            forecast = forecast * Tensor(stats[1]) + Tensor(stats[0])
        return forecast
