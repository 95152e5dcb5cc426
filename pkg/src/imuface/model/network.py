"""The CNN feature extractor, transformer encoder/decoder stack, and the
four wiring variants.

All variants produce a per-frame estimate out[:, k] for label frame k of
the 60-frame window:

  h-c-dec        zero-padded AU history -> encoder; CNN features ->
                 decoder (queries from the IMU side); full self-attention.
  a-transformer  CNN features -> encoder; right-shifted AU tokens ->
                 decoder under a causal mask (next-step prediction).
  c-enc          CNN features -> encoder -> linear head; no history path.
  c-enc-h        CNN features -> encoder; zero-padded AU history ->
                 decoder (queries from the history side).
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .layers import (Conv1d, Dropout, FeedForward, LayerNorm, LeakyReLU,
                     Linear, MaxPool1d, ModelError, Module,
                     MultiHeadAttention, causal_mask, sinusoidal_encoding)


class FeatureExtractor(Module):
    """conv-conv-pool-conv-pool stack flattened into one feature vector.

    Four same-length convolutions (kernel 3, stride 1) with widening
    channels, pooling after the second and fourth, LeakyReLU throughout,
    dropout at the fully-connected input during training.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        dt = cfg.np_dtype
        c1, c2, c3, c4 = cfg.cnn_channels
        self.conv1 = self.add_child(Conv1d(cfg.in_channels, c1, rng, dt, name="cnn.conv1"))
        self.act1 = LeakyReLU()
        self.conv2 = self.add_child(Conv1d(c1, c2, rng, dt, name="cnn.conv2"))
        self.act2 = LeakyReLU()
        self.pool1 = MaxPool1d()
        self.conv3 = self.add_child(Conv1d(c2, c3, rng, dt, name="cnn.conv3"))
        self.act3 = LeakyReLU()
        self.conv4 = self.add_child(Conv1d(c3, c4, rng, dt, name="cnn.conv4"))
        self.act4 = LeakyReLU()
        self.pool2 = MaxPool1d()
        self.drop = Dropout(cfg.cnn_dropout)
        self.fc = self.add_child(Linear(cfg.cnn_flat_dim, cfg.feature_dim, rng, dt, "cnn.fc"))
        self.act5 = LeakyReLU()
        self.cfg = cfg
        self._flat_shape: tuple | None = None

    def forward(self, patches: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None, cache: bool = True) -> np.ndarray:
        if patches.ndim != 3 or patches.shape[1:] != (self.cfg.patch_len, self.cfg.in_channels):
            raise ModelError(
                f"expected (n, {self.cfg.patch_len}, {self.cfg.in_channels}) patches, "
                f"got {patches.shape}")
        x = self.act1.forward(self.conv1.forward(patches, cache), cache)
        x = self.act2.forward(self.conv2.forward(x, cache), cache)
        x = self.pool1.forward(x, cache)
        x = self.act3.forward(self.conv3.forward(x, cache), cache)
        x = self.act4.forward(self.conv4.forward(x, cache), cache)
        x = self.pool2.forward(x, cache)
        self._flat_shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        flat = self.drop.forward(flat, train, rng, cache)
        return self.act5.forward(self.fc.forward(flat, cache), cache)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = self.fc.backward(self.act5.backward(grad))
        g = self.drop.backward(g)
        g = g.reshape(self._flat_shape)
        g = self.pool2.backward(g)
        g = self.conv4.backward(self.act4.backward(g))
        g = self.conv3.backward(self.act3.backward(g))
        g = self.pool1.backward(g)
        g = self.conv2.backward(self.act2.backward(g))
        return self.conv1.backward(self.act1.backward(g))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str):
        super().__init__()
        dt = cfg.np_dtype
        self.attn = self.add_child(MultiHeadAttention(cfg.d_model, cfg.n_head, rng, dt,
                                                      f"{name}.self"))
        self.ln1 = self.add_child(LayerNorm(cfg.d_model, dt, f"{name}.ln1"))
        self.ff = self.add_child(FeedForward(cfg.d_model, cfg.d_ff, rng, dt, f"{name}.ff"))
        self.ln2 = self.add_child(LayerNorm(cfg.d_model, dt, f"{name}.ln2"))
        self.drop1 = Dropout(cfg.dropout)
        self.drop2 = Dropout(cfg.dropout)

    def forward(self, x: np.ndarray, train: bool, rng, cache: bool = True) -> np.ndarray:
        a = self.drop1.forward(self.attn.forward(x, x, None, cache), train, rng, cache)
        x = self.ln1.forward(x + a, cache)
        f = self.drop2.forward(self.ff.forward(x, cache), train, rng, cache)
        return self.ln2.forward(x + f, cache)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = self.ln2.backward(grad)
        gx = g + self.ff.backward(self.drop2.backward(g))
        g = self.ln1.backward(gx)
        dq, dkv = self.attn.backward(self.drop1.backward(g))
        return g + dq + dkv


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str):
        super().__init__()
        dt = cfg.np_dtype
        self.self_attn = self.add_child(
            MultiHeadAttention(cfg.d_model, cfg.n_head, rng, dt, f"{name}.self"))
        self.ln1 = self.add_child(LayerNorm(cfg.d_model, dt, f"{name}.ln1"))
        self.cross_attn = self.add_child(
            MultiHeadAttention(cfg.d_model, cfg.n_head, rng, dt, f"{name}.cross"))
        self.ln2 = self.add_child(LayerNorm(cfg.d_model, dt, f"{name}.ln2"))
        self.ff = self.add_child(FeedForward(cfg.d_model, cfg.d_ff, rng, dt, f"{name}.ff"))
        self.ln3 = self.add_child(LayerNorm(cfg.d_model, dt, f"{name}.ln3"))
        self.drop1 = Dropout(cfg.dropout)
        self.drop2 = Dropout(cfg.dropout)
        self.drop3 = Dropout(cfg.dropout)

    def forward(self, x: np.ndarray, memory: np.ndarray, self_mask, train, rng,
                cache: bool = True) -> np.ndarray:
        a = self.drop1.forward(self.self_attn.forward(x, x, self_mask, cache),
                               train, rng, cache)
        x = self.ln1.forward(x + a, cache)
        c = self.drop2.forward(self.cross_attn.forward(x, memory, None, cache),
                               train, rng, cache)
        x = self.ln2.forward(x + c, cache)
        f = self.drop3.forward(self.ff.forward(x, cache), train, rng, cache)
        return self.ln3.forward(x + f, cache)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.ln3.backward(grad)
        gx = g + self.ff.backward(self.drop3.backward(g))
        g = self.ln2.backward(gx)
        dq, dmem = self.cross_attn.backward(self.drop2.backward(g))
        gx = g + dq
        g = self.ln1.backward(gx)
        dq2, dkv2 = self.self_attn.backward(self.drop1.backward(g))
        return g + dq2 + dkv2, dmem


class AuForecaster(Module):
    """One model variant: CNN features plus AU history in the spec wiring."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dt = cfg.np_dtype
        rng = np.random.default_rng(cfg.init_seed)
        self.cnn = self.add_child(FeatureExtractor(cfg, rng))
        self.aux_head = self.add_child(
            Linear(cfg.feature_dim, cfg.au_channels, rng, dt, "aux_head"))
        self.feat_embed = self.add_child(
            Linear(cfg.feature_dim, cfg.d_model, rng, dt, "feat_embed"))
        if cfg.variant != "c-enc":
            self.au_embed = self.add_child(
                Linear(cfg.au_channels, cfg.d_model, rng, dt, "au_embed"))
        else:
            self.au_embed = None
        self.encoder = [EncoderLayer(cfg, rng, f"enc{i}") for i in range(cfg.enc_layers)]
        for layer in self.encoder:
            self.add_child(layer)
        if cfg.variant != "c-enc":
            self.decoder = [DecoderLayer(cfg, rng, f"dec{i}") for i in range(cfg.dec_layers)]
            for layer in self.decoder:
                self.add_child(layer)
        else:
            self.decoder = []
        self.head = self.add_child(Linear(cfg.d_model, cfg.au_channels, rng, dt, "head"))
        self.pos = sinusoidal_encoding(cfg.seq_len, cfg.d_model, dt)
        self._causal = causal_mask(cfg.seq_len, dt)
        self.dropout_rng = np.random.default_rng(0)
        self._cache_live = False

    # -- helpers ----------------------------------------------------------

    def seed_dropout(self, seed: int) -> None:
        self.dropout_rng = np.random.default_rng(seed)

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def positional_encode(self, seq: np.ndarray) -> np.ndarray:
        """Add the fixed sinusoidal table to an (..., n, d_model) sequence."""
        n = seq.shape[-2]
        if n > self.cfg.seq_len:
            raise ModelError(f"sequence length {n} exceeds {self.cfg.seq_len}")
        return seq + self.pos[:n]

    def _pad_history(self, history: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if history.ndim != 3 or history.shape[1] != cfg.history_len \
                or history.shape[2] != cfg.au_channels:
            raise ModelError(
                f"expected (B, {cfg.history_len}, {cfg.au_channels}) history, "
                f"got {history.shape}")
        B = history.shape[0]
        padded = np.zeros((B, cfg.seq_len, cfg.au_channels), dtype=cfg.np_dtype)
        padded[:, :cfg.history_len] = history
        return padded

    def _shift_tokens(self, au_frames: np.ndarray) -> np.ndarray:
        """Right-shift with a zero start token: tokens[k] = frame k-1."""
        tokens = np.zeros_like(au_frames)
        tokens[:, 1:] = au_frames[:, :-1]
        return tokens

    def _run_encoder(self, x: np.ndarray, train, rng, cache) -> np.ndarray:
        x = self.positional_encode(x)
        for layer in self.encoder:
            x = layer.forward(x, train, rng, cache)
        return x

    def _run_decoder(self, x: np.ndarray, memory: np.ndarray, mask, train, rng,
                     cache) -> np.ndarray:
        x = self.positional_encode(x)
        for layer in self.decoder:
            x = layer.forward(x, memory, mask, train, rng, cache)
        return x

    # -- forward / backward ------------------------------------------------

    def forward(self, patches: np.ndarray, history: np.ndarray | None = None,
                au_frames: np.ndarray | None = None, train: bool = False,
                cache: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Returns (out, aux): per-frame estimates (B, 60, 14) and the CNN
        auxiliary per-patch estimates of the same shape.

        `history` feeds h-c-dec / c-enc-h; `au_frames` are the teacher
        tokens for a-transformer training (shifted internally).
        """
        cfg = self.cfg
        if patches.ndim != 4 or patches.shape[1] != cfg.seq_len:
            raise ModelError(
                f"expected (B, {cfg.seq_len}, {cfg.patch_len}, {cfg.in_channels}) "
                f"patches, got {patches.shape}")
        B = patches.shape[0]
        rng = self.dropout_rng
        flat = patches.reshape(B * cfg.seq_len, cfg.patch_len, cfg.in_channels)
        feats = self.cnn.forward(flat.astype(cfg.np_dtype, copy=False), train, rng, cache)
        aux = self.aux_head.forward(feats, cache).reshape(B, cfg.seq_len, cfg.au_channels)
        feats_seq = feats.reshape(B, cfg.seq_len, cfg.feature_dim)

        if cfg.variant == "h-c-dec":
            if history is None:
                raise ModelError("h-c-dec requires a history prefix")
            enc_in = self.au_embed.forward(self._pad_history(history), cache)
            memory = self._run_encoder(enc_in, train, rng, cache)
            dec_in = self.feat_embed.forward(feats_seq, cache)
            dec = self._run_decoder(dec_in, memory, None, train, rng, cache)
            out = self.head.forward(dec, cache)
        elif cfg.variant == "c-enc-h":
            if history is None:
                raise ModelError("c-enc-h requires a history prefix")
            enc_in = self.feat_embed.forward(feats_seq, cache)
            memory = self._run_encoder(enc_in, train, rng, cache)
            dec_in = self.au_embed.forward(self._pad_history(history), cache)
            dec = self._run_decoder(dec_in, memory, None, train, rng, cache)
            out = self.head.forward(dec, cache)
        elif cfg.variant == "a-transformer":
            if au_frames is None:
                raise ModelError("a-transformer requires teacher AU frames")
            if au_frames.shape != (B, cfg.seq_len, cfg.au_channels):
                raise ModelError(f"bad au_frames shape {au_frames.shape}")
            enc_in = self.feat_embed.forward(feats_seq, cache)
            memory = self._run_encoder(enc_in, train, rng, cache)
            tokens = self._shift_tokens(au_frames.astype(cfg.np_dtype, copy=False))
            dec_in = self.au_embed.forward(tokens, cache)
            dec = self._run_decoder(dec_in, memory, self._causal, train, rng, cache)
            out = self.head.forward(dec, cache)
        elif cfg.variant == "c-enc":
            enc_in = self.feat_embed.forward(feats_seq, cache)
            memory = self._run_encoder(enc_in, train, rng, cache)
            out = self.head.forward(memory, cache)
        else:  # pragma: no cover - config validates variants
            raise ModelError(f"unknown variant {cfg.variant}")

        self._cache_live = cache
        return out, aux

    def backward(self, d_out: np.ndarray, d_aux: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients for the cached forward pass."""
        if not self._cache_live:
            raise ModelError("backward called without a cached forward")
        cfg = self.cfg
        B = d_out.shape[0]
        g = self.head.backward(d_out)

        if cfg.variant == "c-enc":
            dmem = g
            d_enc_in = self._encoder_backward(dmem)
            d_feats_seq = self.feat_embed.backward(d_enc_in)
        elif cfg.variant == "h-c-dec":
            d_dec_in, dmem = self._decoder_backward(g)
            d_feats_seq = self.feat_embed.backward(d_dec_in)
            d_enc_in = self._encoder_backward(dmem)
            self.au_embed.backward(d_enc_in)  # ground-truth history: grad stops here
        elif cfg.variant == "c-enc-h":
            d_dec_in, dmem = self._decoder_backward(g)
            self.au_embed.backward(d_dec_in)
            d_enc_in = self._encoder_backward(dmem)
            d_feats_seq = self.feat_embed.backward(d_enc_in)
        else:  # a-transformer
            d_dec_in, dmem = self._decoder_backward(g)
            self.au_embed.backward(d_dec_in)  # teacher tokens: grad stops here
            d_enc_in = self._encoder_backward(dmem)
            d_feats_seq = self.feat_embed.backward(d_enc_in)

        d_feats = d_feats_seq.reshape(B * cfg.seq_len, cfg.feature_dim)
        if d_aux is not None:
            d_feats = d_feats + self.aux_head.backward(
                d_aux.reshape(B * cfg.seq_len, cfg.au_channels))
        self.cnn.backward(d_feats)
        self._cache_live = False

    def _encoder_backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.encoder):
            grad = layer.backward(grad)
        return grad  # positional encoding adds a constant: identity gradient

    def _decoder_backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dmem_total = None
        for layer in reversed(self.decoder):
            grad, dmem = layer.backward(grad)
            dmem_total = dmem if dmem_total is None else dmem_total + dmem
        return grad, dmem_total

    # -- inference ----------------------------------------------------------

    def predict(self, patches: np.ndarray, history: np.ndarray | None) -> np.ndarray:
        """Eval-mode window estimate, (B, 60, 14); autoregressive for the
        a-transformer variant, single shot otherwise."""
        if self.cfg.variant == "a-transformer":
            return self.generate(patches, history)
        out, _ = self.forward(patches, history=history, train=False, cache=False)
        return out

    def generate(self, patches: np.ndarray, history: np.ndarray) -> np.ndarray:
        """Self-fed decoding: frames past the history prefix are produced
        one step at a time from the model's own outputs. The IMU memory is
        token-independent, so it is computed once."""
        cfg = self.cfg
        if cfg.variant != "a-transformer":
            raise ModelError("generate() is only defined for the a-transformer variant")
        B = patches.shape[0]
        flat = patches.reshape(B * cfg.seq_len, cfg.patch_len, cfg.in_channels)
        feats = self.cnn.forward(flat.astype(cfg.np_dtype, copy=False), False, None, False)
        feats_seq = feats.reshape(B, cfg.seq_len, cfg.feature_dim)
        enc_in = self.feat_embed.forward(feats_seq, cache=False)
        memory = self._run_encoder(enc_in, False, None, False)
        frames = np.zeros((B, cfg.seq_len, cfg.au_channels), dtype=cfg.np_dtype)
        frames[:, :cfg.history_len] = history
        for k in range(cfg.history_len, cfg.seq_len):
            dec_in = self.au_embed.forward(self._shift_tokens(frames), cache=False)
            dec = self._run_decoder(dec_in, memory, self._causal, False, None, False)
            out = self.head.forward(dec, cache=False)
            frames[:, k] = out[:, k]
        return frames
