"""Temporal convolutional autoencoder with an entropy bottleneck.

Encoder: stacked dilated causal convolution blocks (dilation doubling per
block, residual 1x1 connections), flattened and compressed by a linear
layer to a per-window latent. Decoder mirrors the encoder with transposed
causal convolutions in reversed dilation order. A factorized density over
the latent provides the rate estimate; a config flag bypasses the
bottleneck entirely to recover the plain autoencoder baseline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, ParseError
from .numerics import Parameter, RngState, Tensor, functional as F
from .bottleneck import FactorizedDensity, LatentCodec, QuantizerMode, quantize


@dataclass(frozen=True)
class TcnConfig:
    input_channels: int = 8
    window_length: int = 200
    blocks: int = 8
    layers_per_block: int = 2
    channel_width: int = 128
    kernel_width: int = 3
    latent_dim: int = 64
    bottleneck_enabled: bool = True
    density_filters: tuple = (3, 3, 3)
    density_init_scale: float = 10.0
    likelihood_floor: float = 1e-9
    dilations: tuple = field(default=None)  # derived; explicit values are validated

    def __post_init__(self):
        if min(self.input_channels, self.window_length, self.blocks,
               self.layers_per_block, self.channel_width, self.kernel_width,
               self.latent_dim) < 1:
            raise ContractError("all architecture sizes must be positive")
        schedule = tuple(2 ** l for l in range(self.blocks))
        if self.dilations is None:
            object.__setattr__(self, "dilations", schedule)
        elif tuple(self.dilations) != schedule:
            raise ContractError(
                f"dilation schedule must double per block: expected {schedule}, "
                f"got {tuple(self.dilations)}")
        if self.latent_dim >= self.input_channels * self.window_length:
            raise ContractError(
                f"latent_dim {self.latent_dim} must be strictly smaller than "
                f"C*T = {self.input_channels * self.window_length}")

    @property
    def receptive_field(self):
        growth = sum(self.dilations)
        return 1 + self.layers_per_block * (self.kernel_width - 1) * growth

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        d["density_filters"] = list(self.density_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("dilations") is not None:
            d["dilations"] = tuple(d["dilations"])
        if d.get("density_filters") is not None:
            d["density_filters"] = tuple(d["density_filters"])
        return cls(**d)


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _xavier_uniform(rng, shape, fan_in):
    # gain-1 variant for linear paths (the 1x1 skips): preserves variance
    # through a stack of residual blocks.
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Block:
    """One residual conv block: conv(-relu-conv)* plus a 1x1 skip.

    The last conv of the path is zero-initialized so a freshly built block
    acts as its skip connection; without this, stacking blocks multiplies
    activation variance and desk-scale training starts far off-scale.
    """

    def __init__(self, rng, name, c_in, c_out, layers, k, dilation, transposed):
        self.dilation = dilation
        self.transposed = transposed
        self.convs = []
        for i in range(layers):
            if transposed:
                # channel change on the last layer, mirroring the forward block
                a = c_in
                b = c_in if i < layers - 1 else c_out
                shape = (a, b, k)
            else:
                # channel change on the first layer
                a = c_in if i == 0 else c_out
                b = c_out
                shape = (b, a, k)
            if i == layers - 1:
                init = np.zeros(shape)
            else:
                init = _kaiming_uniform(rng, shape, fan_in=a * k)
            w = Parameter(init, f"{name}.conv{i}.weight")
            bias = Parameter(np.zeros(b), f"{name}.conv{i}.bias")
            self.convs.append((w, bias))
        res_shape = (c_in, c_out, 1) if transposed else (c_out, c_in, 1)
        self.res_w = Parameter(_xavier_uniform(rng, res_shape, fan_in=c_in),
                               f"{name}.res.weight")
        self.res_b = Parameter(np.zeros(c_out), f"{name}.res.bias")

    def parameters(self):
        out = []
        for w, b in self.convs:
            out.extend([w, b])
        out.extend([self.res_w, self.res_b])
        return out

    def forward(self, x):
        op = F.causal_transposed_conv1d if self.transposed else F.causal_conv1d
        h = x
        for i, (w, b) in enumerate(self.convs):
            if i > 0:
                h = F.relu(h)
            h = op(h, w, b, self.dilation)
        skip = op(x, self.res_w, self.res_b, 1)
        return F.add(h, skip)


class TcnAutoencoder:
    """Encoder/decoder pair with shared decoder weights for both
    quantized and unquantized reconstructions."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = RngState(seed)
        wrng = rng.spawn("weights")
        c, t_len, w = config.input_channels, config.window_length, config.channel_width
        k, lpb = config.kernel_width, config.layers_per_block

        self.encoder_blocks = []
        for l in range(config.blocks):
            c_in = c if l == 0 else w
            self.encoder_blocks.append(_Block(
                wrng, f"encoder.block{l}", c_in, w, lpb, k,
                config.dilations[l], transposed=False))

        flat = w * t_len
        self.latent_w = Parameter(
            _kaiming_uniform(wrng, (config.latent_dim, flat), fan_in=flat),
            "latent.weight")
        self.latent_b = Parameter(np.zeros(config.latent_dim), "latent.bias")
        self.expand_w = Parameter(
            _kaiming_uniform(wrng, (flat, config.latent_dim), fan_in=config.latent_dim),
            "expand.weight")
        self.expand_b = Parameter(np.zeros(flat), "expand.bias")

        self.decoder_blocks = []
        for j in range(config.blocks):
            c_out = c if j == config.blocks - 1 else w
            self.decoder_blocks.append(_Block(
                wrng, f"decoder.block{j}", w, c_out, lpb, k,
                config.dilations[config.blocks - 1 - j], transposed=True))

        self.density = FactorizedDensity(
            config.latent_dim, filters=config.density_filters,
            init_scale=config.density_init_scale,
            likelihood_floor=config.likelihood_floor,
            rng=rng.spawn("density"))

        self.omega = np.ones(c)
        self._params = self._collect_parameters()

    def _collect_parameters(self):
        params = []
        for blk in self.encoder_blocks:
            params.extend(blk.parameters())
        params.extend([self.latent_w, self.latent_b, self.expand_w, self.expand_b])
        for blk in self.decoder_blocks:
            params.extend(blk.parameters())
        params.extend(self.density.parameters())
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names in model")
        return params

    def parameters(self, include_density=True):
        if include_density:
            return list(self._params)
        density_names = {p.name for p in self.density.parameters()}
        return [p for p in self._params if p.name not in density_names]

    def named_parameters(self):
        return {p.name: p for p in self._params}

    def _check_input(self, x):
        expected = (self.config.input_channels, self.config.window_length)
        if x.data.shape != expected:
            raise DimensionError(f"input shape {x.data.shape}, expected {expected}")

    def encoder_stack(self, x):
        """Conv stack activations before the latent linear layer."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_input(x)
        h = x
        for blk in self.encoder_blocks:
            h = blk.forward(h)
        return h

    def encode(self, x):
        h = self.encoder_stack(x)
        return F.linear(F.flatten(h), self.latent_w, self.latent_b)

    def decode(self, z):
        if not isinstance(z, Tensor):
            z = Tensor(z)
        if z.data.shape != (self.config.latent_dim,):
            raise DimensionError(
                f"latent shape {z.data.shape}, expected ({self.config.latent_dim},)")
        h = F.reshape(F.linear(z, self.expand_w, self.expand_b),
                      (self.config.channel_width, self.config.window_length))
        for blk in self.decoder_blocks:
            h = blk.forward(h)
        return h

    def forward_train(self, x, rng):
        """Training pass: noise-quantized and clean reconstructions plus rate."""
        if not self.config.bottleneck_enabled:
            raise ContractError("forward_train requires the bottleneck; "
                                "use ae_reconstruct for the baseline")
        y = self.encode(x)
        z = quantize(y, QuantizerMode.NOISE, rng)
        return self.decode(z), self.decode(y), self.density.rate_bits(z)

    def forward_train_with_noise(self, x, noise):
        """forward_train with the quantization noise pinned (for gradient checks)."""
        y = self.encode(x)
        z = F.add(y, Tensor(noise))
        return self.decode(z), self.decode(y), self.density.rate_bits(z)

    def ae_reconstruct(self, x):
        """Baseline path: latent fed straight to the decoder, no quantization."""
        return self.decode(self.encode(x))

    def forward_eval(self, x):
        """Inference reconstruction (deterministic, no RNG consumed)."""
        if self.config.bottleneck_enabled:
            z = quantize(self.encode(x), QuantizerMode.ROUND)
            return self.decode(z)
        return self.ae_reconstruct(x)

    def latent_symbols(self, x):
        """Integer (rounded) latent for entropy coding."""
        z = quantize(self.encode(x), QuantizerMode.ROUND)
        return z.data.astype(np.int64)

    def conv_weight_sizes(self, which):
        blocks = self.encoder_blocks if which == "encoder" else self.decoder_blocks
        sizes = []
        for blk in blocks:
            sizes.extend(w.data.size for w, _ in blk.convs)
            sizes.append(blk.res_w.data.size)
        return sorted(sizes)


def config_hash(payload):
    """Stable hash of a JSON-serializable config payload."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(model, out_dir, codec_support=None, extra=None):
    """Write checkpoint.bin (raw little-endian float64 parameter blob, in
    declared name order) and manifest.json describing it."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    table = []
    for p in model.parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        table.append({"name": p.name, "shape": list(p.data.shape),
                      "offset": len(blob), "bytes": len(raw)})
        blob += raw
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": config_hash(model.config.to_dict()),
        "parameters": table,
        "omega": model.omega.tolist(),
        "density_tables": None,
    }
    if codec_support is not None:
        lo, hi = codec_support
        codec = LatentCodec(model.density, lo, hi)
        manifest["density_tables"] = {
            "support_lo": np.asarray(lo).tolist(),
            "support_hi": np.asarray(hi).tolist(),
            "frequencies": [t.freqs.tolist() for t in codec.tables],
        }
    if extra:
        manifest.update(extra)
    (out_dir / "checkpoint.bin").write_bytes(bytes(blob))
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir / "checkpoint.bin", out_dir / "manifest.json"


def load_checkpoint(ckpt_dir):
    """Rebuild a model (and its codec, when saved) from a checkpoint directory."""
    from pathlib import Path

    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    if manifest["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {manifest['format_version']}")
    config = TcnConfig.from_dict(manifest["config"])
    model = TcnAutoencoder(config, seed=0)
    blob = (ckpt_dir / "checkpoint.bin").read_bytes()
    by_name = model.named_parameters()
    for entry in manifest["parameters"]:
        p = by_name.get(entry["name"])
        if p is None:
            raise ParseError(f"checkpoint has unknown parameter {entry['name']}")
        raw = blob[entry["offset"]: entry["offset"] + entry["bytes"]]
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"])
        if arr.shape != p.data.shape:
            raise ParseError(f"shape mismatch for {entry['name']}")
        p.data = np.ascontiguousarray(arr, dtype=np.float64)
    model.omega = np.asarray(manifest["omega"], dtype=np.float64)
    codec = None
    if manifest.get("density_tables"):
        dt = manifest["density_tables"]
        codec = LatentCodec(model.density,
                            np.asarray(dt["support_lo"], dtype=np.int64),
                            np.asarray(dt["support_hi"], dtype=np.int64))
    return model, manifest, codec
