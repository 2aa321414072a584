"""RealMLP network: numeric/categorical embeddings, scaling layer, NTP MLP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from realmlp import autodiff as ad
from realmlp import rng
from realmlp.config import RealMLPConfig

TWO_PI = 2.0 * math.pi

# parameter group -> (lr factor attribute, wd factor attribute)
GROUP_FACTORS = {
    "weight": (None, None),
    "bias": ("lr_factor_bias", "wd_factor_bias"),
    "num_emb": ("lr_factor_emb", None),
    "cat_emb": (None, None),
    "scale": ("lr_factor_scale", None),
    "act": ("lr_factor_act", None),
}


@dataclass
class RealMLP:
    """Parameter store plus architecture description.

    Inputs are the outputs of :class:`~realmlp.preprocess.FittedPreprocessor`:
    a scaled numeric matrix whose first ``n_numerical`` columns go through the
    numeric embedding, and integer slot codes for embedded categoricals.
    """

    config: RealMLPConfig
    task: str
    n_out: int
    n_numerical: int
    n_other: int
    cat_cards: tuple[int, ...]
    params: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def emb_width(self) -> int:
        if self.config.num_embeddings == "none":
            return self.n_numerical
        return self.config.emb_dim * self.n_numerical

    @property
    def input_width(self) -> int:
        return self.emb_width + self.n_other + self.config.cat_emb_dim * len(self.cat_cards)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_width, *self.config.hidden_sizes, self.n_out]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def factor(self, name: str, kind: str) -> float:
        lr_attr, wd_attr = GROUP_FACTORS[self.groups[name]]
        attr = lr_attr if kind == "lr" else wd_attr
        return 1.0 if attr is None else float(getattr(self.config, attr))

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward -------------------------------------------------------------

    def _num_embed(self, x: ad.Var, p: dict) -> ad.Var:
        kind = self.config.num_embeddings
        n, f = x.shape
        xr = ad.reshape(x, (n, f, 1))
        if kind == "pbld":
            u = ad.add(ad.scale(ad.mul(xr, p["num_emb.w1"]), TWO_PI), p["num_emb.b1"])
            e = ad.add(ad.einsum("nfh,fkh->nfk", ad.cos(u), p["num_emb.w2"]), p["num_emb.b2"])
            out = ad.concat([xr, e], axis=2)
        else:
            u = ad.scale(ad.mul(xr, p["num_emb.w1"]), TWO_PI)
            per = ad.concat([ad.cos(u), ad.sin(u)], axis=2)
            out = ad.add(ad.einsum("nfh,fkh->nfk", per, p["num_emb.w2"]), p["num_emb.b2"])
            if kind == "plr":
                out = ad.relu(out)
        return ad.reshape(out, (n, f * out.shape[2]))

    def embed_inputs(self, x: ad.Var, codes: np.ndarray, p: dict) -> ad.Var:
        """Everything before the first linear layer except the scaling layer."""
        f = self.n_numerical
        blocks = []
        if f:
            num = x if self.n_other == 0 else ad.columns(x, 0, f)
            blocks.append(num if self.config.num_embeddings == "none" else self._num_embed(num, p))
        if self.n_other:
            blocks.append(ad.columns(x, f, f + self.n_other))
        for k in range(len(self.cat_cards)):
            blocks.append(ad.gather_rows(p[f"cat_emb.{k}"], codes[:, k]))
        if not blocks:
            raise ad.ShapeError("model has no input features")
        return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)

    def forward(self, tape: ad.Tape, x, codes=None, p: Optional[dict] = None,
                dropout_p: float = 0.0, dropout_rng: Optional[np.random.Generator] = None,
                masks: Optional[Sequence[np.ndarray]] = None, scaling: bool = True) -> ad.Var:
        """Build the network output on ``tape``.

        ``p`` maps parameter names to Vars; by default parameters enter as
        constants (evaluation). Dropout is applied only when ``dropout_p > 0``
        and either ``masks`` or ``dropout_rng`` is given.
        """
        if p is None:
            p = {k: tape.var(v) for k, v in self.params.items()}
        x = x if isinstance(x, ad.Var) else tape.var(np.asarray(x, dtype=self.dtype))
        if x.value.ndim != 2 or x.shape[1] != self.n_numerical + self.n_other:
            raise ad.ShapeError(f"expected input width {self.n_numerical + self.n_other}, got {x.shape}")
        codes = np.zeros((x.shape[0], 0), dtype=np.int64) if codes is None else np.asarray(codes)
        h = self.embed_inputs(x, codes, p)
        if self.config.scaling_layer and scaling:
            h = ad.mul(h, p["scale"])
        cfg = self.config
        for l in range(self.n_layers):
            h = ad.linear(h, p[f"layer{l}.weight"], p[f"layer{l}.bias"], 1.0 / math.sqrt(h.shape[1]))
            if l == self.n_layers - 1:
                break
            if cfg.param_act:
                h = ad.param_act(h, p[f"act{l}.alpha"], cfg.activation)
            else:
                h = ad.activation(h, cfg.activation)
            if dropout_p > 0.0:
                if masks is not None:
                    h = ad.dropout(h, masks[l], dropout_p)
                elif dropout_rng is not None:
                    mask = dropout_rng.random(h.shape) >= dropout_p
                    h = ad.dropout(h, mask, dropout_p)
        return h

    def output(self, x, codes=None) -> np.ndarray:
        """Raw network outputs (logits or standardized regression values), eval mode."""
        return self.forward(ad.Tape(), x, codes).value


def build_model(config: RealMLPConfig, preprocessor, task: str, n_classes: int = 0) -> RealMLP:
    """Allocate parameters (uninitialized values) for a fitted preprocessor."""
    if task == "classification":
        if n_classes < 2:
            raise ValueError("classification needs at least two classes")
        n_out = n_classes
    else:
        n_out = 1
    n_num = preprocessor.n_numerical
    model = RealMLP(config, task, n_out, n_num, preprocessor.out_width - n_num,
                    tuple(preprocessor.embed_cardinalities))
    if model.input_width == 0:
        raise ValueError("model input width is zero")
    dt = model.dtype
    params, groups = {}, {}

    def add(name, shape, group, fill=0.0):
        params[name] = np.full(shape, fill, dtype=dt)
        groups[name] = group

    emb = config.num_embeddings
    if n_num and emb != "none":
        h = config.emb_hidden
        if emb == "pbld":
            add("num_emb.w1", (n_num, h), "num_emb")
            add("num_emb.b1", (n_num, h), "num_emb")
            add("num_emb.w2", (n_num, config.emb_dim - 1, h), "num_emb")
            add("num_emb.b2", (n_num, config.emb_dim - 1), "num_emb")
        else:
            add("num_emb.w1", (n_num, h), "num_emb")
            add("num_emb.w2", (n_num, config.emb_dim, 2 * h), "num_emb")
            add("num_emb.b2", (n_num, config.emb_dim), "num_emb")
    for k, card in enumerate(model.cat_cards):
        add(f"cat_emb.{k}", (card, config.cat_emb_dim), "cat_emb")
    if config.scaling_layer:
        add("scale", (model.input_width,), "scale", 1.0)
    sizes = model.layer_sizes
    for l in range(model.n_layers):
        add(f"layer{l}.weight", (sizes[l + 1], sizes[l]), "weight")
        add(f"layer{l}.bias", (sizes[l + 1],), "bias")
        if config.param_act and l < model.n_layers - 1:
            add(f"act{l}.alpha", (sizes[l + 1],), "act", 1.0)
    model.params, model.groups = params, groups
    return model


def _init_embeddings(model: RealMLP, gen: np.random.Generator) -> None:
    cfg, p, dt = model.config, model.params, model.dtype
    if "num_emb.w1" in p:
        p["num_emb.w1"][...] = gen.normal(0.0, cfg.periodic_init_std, p["num_emb.w1"].shape)
        if "num_emb.b1" in p:
            p["num_emb.b1"][...] = gen.uniform(-math.pi, math.pi, p["num_emb.b1"].shape)
        bound = 1.0 / math.sqrt(p["num_emb.w2"].shape[2])
        p["num_emb.w2"][...] = gen.uniform(-bound, bound, p["num_emb.w2"].shape)
        p["num_emb.b2"][...] = gen.uniform(-bound, bound, p["num_emb.b2"].shape)
    for k in range(len(model.cat_cards)):
        name = f"cat_emb.{k}"
        p[name][...] = gen.standard_normal(p[name].shape).astype(dt)
    if "scale" in p:
        p["scale"][...] = 1.0
    for name in p:
        if name.endswith(".alpha"):
            p[name][...] = 1.0


def init_simple_tds(model: RealMLP, seed: int) -> None:
    """Standard-normal weights and biases; zeros in the last layer."""
    gen = rng.stream(seed, "init")
    _init_embeddings(model, gen)
    last = model.n_layers - 1
    for l in range(model.n_layers):
        for part in ("weight", "bias"):
            arr = model.params[f"layer{l}.{part}"]
            arr[...] = 0.0 if l == last else gen.standard_normal(arr.shape)


def _preact_std(pre: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean((pre - pre.mean(axis=0)) ** 2, axis=0))


def init_data_dependent(model: RealMLP, x, codes=None, seed: int = 0) -> None:
    """Layer-by-layer init on a forward pass over the sample ``(x, codes)``.

    Weight rows start standard normal and are divided by the population std of
    their NTP pre-activation over the sample, so each unit has unit variance
    (units with zero variance are left as drawn). Biases follow
    ``config.bias_init``; ``he5_standin`` sets each unit's bias to minus its
    pre-activation at an independently drawn sample row, which puts the kink
    of every unit inside the data.
    """
    x = np.asarray(x, dtype=model.dtype)
    if x.shape[0] == 0:
        raise ValueError("data-dependent init needs a non-empty sample")
    gen = rng.stream(seed, "init")
    _init_embeddings(model, gen)
    cfg, p = model.config, model.params
    tape = ad.Tape()
    h = model.embed_inputs(tape.var(x), np.zeros((len(x), 0), np.int64) if codes is None else codes,
                           {k: tape.var(v) for k, v in p.items()})
    h = h.value
    if cfg.scaling_layer:
        h = h * p["scale"]
    for l in range(model.n_layers):
        w, b = p[f"layer{l}.weight"], p[f"layer{l}.bias"]
        c = 1.0 / math.sqrt(h.shape[1])
        w[...] = gen.standard_normal(w.shape)
        std = _preact_std((h @ w.T) * c)
        live = std > 1e-12
        w[live] /= std[live, None]
        pre = (h @ w.T) * c
        if cfg.bias_init == "he5_standin":
            rows = gen.integers(0, len(h), size=w.shape[0])
            b[...] = -pre[rows, np.arange(w.shape[0])]
        elif cfg.bias_init == "normal":
            b[...] = gen.standard_normal(b.shape)
        else:
            b[...] = 0.0
        if l < model.n_layers - 1:
            h = ad.ACTIVATIONS[cfg.activation](pre + b)[0]


def init_sample(n_train: int, cap: int, seed: int) -> np.ndarray:
    """Row positions (into the training set) used for data-dependent init."""
    if n_train <= cap:
        return np.arange(n_train)
    return np.sort(rng.stream(seed, "init_sample").choice(n_train, size=cap, replace=False))


def initialize(model: RealMLP, x, codes, seed: int) -> None:
    if model.config.init == "simple":
        init_simple_tds(model, seed)
    else:
        idx = init_sample(len(x), model.config.init_sample_cap, seed)
        init_data_dependent(model, np.asarray(x)[idx], np.asarray(codes)[idx], seed)
