"""The full training loop: disentanglement, graph building, and the
adversarial domain-alignment objective, in four sub-updates per step.

Step order within one training step:

1. swap discriminator update (real target vs swapped composites),
2. encoder/decoder update on the weighted disentanglement objective,
3. domain classifier update on detached graph embeddings,
4. task update (classification + adversarial fool loss) through the GCN,
   node features, and encoders.

Discriminator updates never move generator-side weights and vice versa; the
two sides only communicate through loss values and the alternating schedule.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, absolute, concat, softmax_cross_entropy
from .autodiff import binary_cross_entropy
from .data import DomainDataset, batches
from .disentangle import Fdn, disc_loss_swap, gen_loss_swap, loss_disent, loss_str
from .errors import ConfigError
from .graph import GcnStack, InstanceGraph, build_graph, gcn_forward
from .metrics import accuracy, macro_auc
from .nn import Linear, Module
from .optim import Adam


@dataclass
class TrainConfig:
    lambda_swap: float = 0.9      # weight of the swap-adversarial fool term
    lambda_str: float = 1.2       # weight of the structure-consistency term
    lambda_adv: float = 1.3       # weight of the domain-adversarial fool term
    learning_rate: float = 1e-3
    gen_lr: float | None = None   # autoencoder update rate; None = learning_rate
    dom_lr: float | None = None   # domain-classifier update rate; None = gen_lr
    epochs: int = 15
    batch_size: int = 8
    image_size: int = 32
    in_channels: int = 1
    d_tex: int = 32
    c_str: int = 1
    enc_widths: tuple = (64, 32, 32)
    disc_widths: tuple = (32, 32, 64)
    gcn_hidden: int = 32
    gcn_out: int = 16
    dom_hidden: int = 16
    n_classes: int = 4
    seed: int = 0
    disable_str: bool = False     # ablation: drop the structure term
    disable_swap: bool = False    # ablation: drop both swap-adversarial terms
    source_only: bool = False     # baseline: never touch target data
    rec_loss: str = "l1"
    domain_disc_on_latents: bool = False  # feed latents to D alongside embeddings
    eval_batch: int | None = None

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        for name in ("lambda_swap", "lambda_str", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.gen_lr is not None and self.gen_lr <= 0:
            raise ConfigError(f"gen_lr must be positive, got {self.gen_lr}")
        if self.dom_lr is not None and self.dom_lr <= 0:
            raise ConfigError(f"dom_lr must be positive, got {self.dom_lr}")
        if self.image_size % 4:
            raise ConfigError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.rec_loss not in ("l1", "l2"):
            raise ConfigError(f"rec_loss must be 'l1' or 'l2', got {self.rec_loss!r}")
        if self.eval_batch is not None and self.eval_batch < 1:
            raise ConfigError(f"eval_batch must be positive, got {self.eval_batch}")

    @property
    def node_dim(self) -> int:
        q = self.image_size // 4
        return self.d_tex + self.c_str * q * q


@dataclass
class LossBreakdown:
    rec: float = 0.0
    swap_g: float = 0.0
    swap_d: float = 0.0
    str: float = 0.0
    cls: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    disent_total: float = 0.0
    total: float = 0.0
    lambda_swap: float = 0.0
    lambda_str: float = 0.0
    lambda_adv: float = 0.0

    FIELDS = ("rec", "swap_g", "swap_d", "str", "cls", "adv_g", "adv_d",
              "disent_total", "total", "lambda_swap", "lambda_str", "lambda_adv")


class DomainClassifier(Module):
    """Scores whether a graph embedding came from the target domain."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def __call__(self, emb: Tensor) -> Tensor:
        return self.fc2(self.fc1(emb).relu()).sigmoid().reshape(-1)


@dataclass
class ModelBundle:
    fdn: Fdn
    gcn: GcnStack
    head: Linear
    dom: DomainClassifier
    config: TrainConfig

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        named.extend(self.fdn.named_parameters("fdn."))
        named.extend(self.gcn.named_parameters("gcn."))
        named.extend(self.head.named_parameters("head."))
        named.extend(self.dom.named_parameters("dom."))
        return named


def build_bundle(config: TrainConfig) -> ModelBundle:
    config.validate()
    rng = np.random.default_rng(config.seed)
    fdn = Fdn(
        in_ch=config.in_channels,
        h=config.image_size,
        w=config.image_size,
        d_tex=config.d_tex,
        c_str=config.c_str,
        widths=config.enc_widths,
        disc_widths=config.disc_widths,
        rng=rng,
    )
    gcn = GcnStack(config.node_dim, config.gcn_hidden, config.gcn_out, rng)
    head = Linear(config.gcn_out, config.n_classes, rng)
    dom_in = config.gcn_out + (config.node_dim if config.domain_disc_on_latents else 0)
    dom = DomainClassifier(dom_in, config.dom_hidden, rng)
    return ModelBundle(fdn=fdn, gcn=gcn, head=head, dom=dom, config=config)


class TrainState:
    """A bundle plus the four per-objective optimizers."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        cfg = bundle.config
        lr = cfg.learning_rate
        # The swap discriminator moves at the generator's rate: a faster
        # discriminator saturates, and the non-saturating generator loss
        # through a saturated discriminator dwarfs the reconstruction term.
        gen_rate = cfg.gen_lr if cfg.gen_lr is not None else lr
        self.opt_dfd = Adam(bundle.fdn.disc.parameters(), lr=gen_rate)
        self.opt_gen = Adam(bundle.fdn.generator_parameters(), lr=gen_rate)
        dom_rate = cfg.dom_lr if cfg.dom_lr is not None else gen_rate
        self.opt_dom = Adam(bundle.dom.parameters(), lr=dom_rate)
        # The task objective reaches back through the graph network into the
        # encoders, so the label signal shapes the structure codes themselves.
        # The encoders move at the generator's rate here: the task pull on
        # encoder_S has no counterpart on encoder_T, and at the full task rate
        # it breaks the correspondence the swap game maintains.
        self.opt_task = Adam(bundle.gcn.parameters() + bundle.head.parameters(), lr=lr)
        enc_params = bundle.fdn.encoder_S.parameters() + bundle.fdn.encoder_T.parameters()
        self.opt_task_enc = Adam(enc_params, lr=gen_rate)


# ---------------------------------------------------------------------------
# loss components


def classification_loss(head: Linear, embeddings: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of the linear head over source embeddings."""
    return softmax_cross_entropy(head(embeddings), labels)


def domain_disc_loss(dom: DomainClassifier, emb_S: Tensor, emb_T: Tensor) -> Tensor:
    """Domain classifier objective: target scores 1, source scores 0.
    Callers pass detached embeddings, so only the classifier learns here."""
    if emb_S.data.shape[0] == 0 or emb_T.data.shape[0] == 0:
        raise ValueError("domain discriminator loss needs non-empty batches")
    on_target = binary_cross_entropy(dom(emb_T), 1.0).mean()
    on_source = binary_cross_entropy(dom(emb_S), 0.0).mean()
    return on_target + on_source


def domain_gen_loss(dom: DomainClassifier, emb_S: Tensor, emb_T: Tensor) -> Tensor:
    """Non-saturating fool loss: each domain's embeddings are pushed toward
    the label the classifier assigns to the other domain."""
    if emb_S.data.shape[0] == 0 or emb_T.data.shape[0] == 0:
        raise ValueError("domain fool loss needs non-empty batches")
    on_source = binary_cross_entropy(dom(emb_S), 1.0).mean()
    on_target = binary_cross_entropy(dom(emb_T), 0.0).mean()
    return on_source + on_target


def total_objective(cls, adv_g, lam_adv: float):
    return cls + lam_adv * adv_g


def adv_warmup(progress: float, start: float = 0.4, knee: float = 0.8) -> float:
    """Delayed linear fade-in for the coupling terms: zero before ``start``,
    full strength (exactly 1.0) from ``knee`` on.

    The adversarial terms perturb the features the classifier reads; applied
    from step zero they keep the head from ever forming.  The delay also
    starts each discriminator cold together with its generator opposition —
    a discriminator that free-runs unopposed saturates, and the
    non-saturating generator loss through a saturated discriminator yields
    gradients orders of magnitude above the reconstruction term."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    if progress >= knee:
        return 1.0
    if progress <= start:
        return 0.0
    return (progress - start) / (knee - start)


def _rec_term(recon: Tensor, target: Tensor, kind: str) -> Tensor:
    diff = recon - target
    return (diff * diff).mean() if kind == "l2" else absolute(diff).mean()


def _dom_input(cfg: TrainConfig, emb: Tensor, graph: InstanceGraph) -> Tensor:
    if cfg.domain_disc_on_latents:
        return concat([emb, graph.x], axis=1)
    return emb


# ---------------------------------------------------------------------------
# the training step


def train_step(
    state: TrainState,
    batch_S: tuple,
    batch_T,
    config: TrainConfig,
    progress: float = 1.0,
) -> LossBreakdown:
    """One full alternating update; see the module docstring for the order.

    ``progress`` (0 at the first step, 1 at the last) scales the adversarial
    weight through :func:`adv_warmup`; direct callers get full strength."""
    bundle = state.bundle
    fdn = bundle.fdn
    x_s, labels_s = batch_S
    x_t = batch_T
    if not config.source_only and x_s.data.shape[0] != x_t.data.shape[0]:
        raise ValueError(
            f"source and target batches must match in size, got "
            f"{x_s.data.shape[0]} and {x_t.data.shape[0]}"
        )

    # All coupling terms (swap, structure, domain game) fade in together:
    # each perturbs the features the classifier reads, and applied from step
    # zero they keep the head from ever forming.
    ramp = adv_warmup(progress)
    out = LossBreakdown(
        lambda_swap=config.lambda_swap * ramp,
        lambda_str=config.lambda_str * ramp,
        lambda_adv=config.lambda_adv * ramp,
    )
    run_swap = not (config.disable_swap or config.source_only) and ramp > 0.0

    # (1) swap discriminator
    if run_swap:
        fake_frozen = fdn.swap_generate(
            fdn.encode("S", x_s).z_str, fdn.encode("T", x_t).z_tex
        )
        state.opt_dfd.zero_grad()
        with Tape() as tape1:
            d_loss = disc_loss_swap(fdn, x_t, fake_frozen)
        tape1.backward(d_loss)
        state.opt_dfd.step()
        out.swap_d = d_loss.item()

    # (2) encoders + decoders on the disentanglement objective
    state.opt_gen.zero_grad()
    with Tape() as tape2:
        code_s = fdn.encode("S", x_s)
        rec = _rec_term(fdn.decode("S", code_s), x_s, config.rec_loss)
        if not config.source_only:
            code_t = fdn.encode("T", x_t)
            rec = rec + _rec_term(fdn.decode("T", code_t), x_t, config.rec_loss)

        swap_term = Tensor(0.0)
        str_term = Tensor(0.0)
        if (
            not config.source_only
            and not (config.disable_swap and config.disable_str)
            and ramp > 0.0
        ):
            fake = fdn.swap_generate(code_s.z_str, code_t.z_tex)
            if run_swap:
                swap_term = gen_loss_swap(fdn, fake)
            if not config.disable_str:
                re_str = fdn.encode("S", fake).z_str
                w = x_s.data.shape[0]
                acc = None
                for i in range(w):
                    term = loss_str(code_s.z_str[i], re_str[i])
                    acc = term if acc is None else acc + term
                str_term = acc * (1.0 / w)
        disent = loss_disent(
            rec, swap_term, str_term,
            config.lambda_swap * ramp, config.lambda_str * ramp,
        )
    tape2.backward(disent)
    state.opt_gen.step()
    out.rec = rec.item()
    out.swap_g = swap_term.item()
    out.str = str_term.item()
    out.disent_total = disent.item()

    # (3) + (4) share one taped forward through encoders, graphs, and GCN
    state.opt_dom.zero_grad()
    with Tape() as tape4:
        code_s2 = fdn.encode("S", x_s)
        graph_s = build_graph(code_s2)
        emb_s = gcn_forward(bundle.gcn, graph_s)

        adv_g_term = Tensor(0.0)
        if not config.source_only and ramp > 0.0:
            code_t2 = fdn.encode("T", x_t)
            graph_t = build_graph(code_t2)
            emb_t = gcn_forward(bundle.gcn, graph_t)

            # (3) domain classifier on frozen embedding values
            in_s = _dom_input(config, emb_s, graph_s).detach()
            in_t = _dom_input(config, emb_t, graph_t).detach()
            with Tape() as tape3:
                adv_d = domain_disc_loss(bundle.dom, in_s, in_t)
            tape3.backward(adv_d)
            state.opt_dom.step()
            out.adv_d = adv_d.item()

            # (4) fool the *updated* classifier
            adv_g_term = domain_gen_loss(
                bundle.dom,
                _dom_input(config, emb_s, graph_s),
                _dom_input(config, emb_t, graph_t),
            )

        cls = classification_loss(bundle.head, emb_s, labels_s)
        lam_adv = 0.0 if config.source_only else config.lambda_adv * ramp
        out.lambda_adv = lam_adv
        total = total_objective(cls, adv_g_term, lam_adv)
    state.opt_task.zero_grad()
    state.opt_task_enc.zero_grad()
    tape4.backward(total)
    state.opt_task.step()
    state.opt_task_enc.step()
    out.cls = cls.item()
    out.adv_g = adv_g_term.item()
    out.total = total.item()
    return out


# ---------------------------------------------------------------------------
# fitting, prediction, evaluation


@dataclass
class History:
    steps: list = field(default_factory=list)    # LossBreakdown per step
    epochs: list = field(default_factory=list)   # per-epoch metric dicts


def fit(
    config: TrainConfig,
    source: DomainDataset,
    target: DomainDataset,
    source_val: DomainDataset | None = None,
    target_val: DomainDataset | None = None,
) -> tuple[ModelBundle, History]:
    """Train a fresh bundle; everything downstream of (config, data) is a
    pure function of the seed."""
    config.validate()
    if source.labels is None:
        raise ValueError("source dataset must be labeled")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("datasets must be non-empty")
    if int(source.labels.max()) >= config.n_classes:
        raise ConfigError(
            f"source labels reach {int(source.labels.max())} but n_classes={config.n_classes}"
        )

    bundle = build_bundle(config)
    state = TrainState(bundle)
    history = History()
    steps_per_epoch = min(
        len(batches(len(source), config.batch_size, config.seed, 0)),
        len(batches(len(target), config.batch_size, config.seed + 1, 0)),
    )
    total_steps = max(1, config.epochs * steps_per_epoch - 1)
    global_step = 0
    for epoch in range(config.epochs):
        bs = batches(len(source), config.batch_size, config.seed, epoch)
        bt = batches(len(target), config.batch_size, config.seed + 1, epoch)
        for step_s, step_t in zip(bs, bt):
            x_s = Tensor(source.images[step_s])
            y_s = source.labels[step_s]
            x_t = Tensor(target.images[step_t])
            history.steps.append(
                train_step(
                    state, (x_s, y_s), x_t, config,
                    progress=global_step / total_steps,
                )
            )
            global_step += 1
        epoch_row = {"epoch": epoch}
        if source_val is not None and source_val.labels is not None:
            epoch_row["source_val_acc"] = evaluate(bundle, source_val, "source")["accuracy"]
        if target_val is not None and target_val.labels is not None:
            epoch_row["target_val_acc"] = evaluate(bundle, target_val, "target")["accuracy"]
        history.epochs.append(epoch_row)
    return bundle, history


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(bundle: ModelBundle, images, domain: str = "target") -> np.ndarray:
    """Class probabilities for a batch of images.

    The evaluation batch is chunked (config.eval_batch, default batch_size)
    and each chunk becomes its own graph; a single image degenerates to a
    self-loop graph.  A source-only bundle routes every image through the
    source encoder, since its target path was never trained.
    """
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    cfg = bundle.config
    arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n,c,h,w) batch, got shape {arr.shape}")
    side = "S" if (domain == "source" or cfg.source_only) else "T"
    chunk = cfg.eval_batch or cfg.batch_size
    probs = []
    for start in range(0, arr.shape[0], chunk):
        x = Tensor(arr[start : start + chunk])
        code = bundle.fdn.encode(side, x)
        emb = gcn_forward(bundle.gcn, build_graph(code))
        probs.append(_softmax(bundle.head(emb).data))
    return np.concatenate(probs, axis=0)


def evaluate(bundle: ModelBundle, ds: DomainDataset, domain: str) -> dict:
    """Accuracy plus one-vs-rest AUCs over a labeled dataset."""
    if ds.labels is None:
        raise ValueError("evaluation needs a labeled dataset")
    probs = predict(bundle, ds.images, domain=domain)
    preds = probs.argmax(axis=1)
    report = {
        "accuracy": accuracy(preds, ds.labels),
        "n_eval": int(len(ds)),
        "domain": domain,
    }
    try:
        per_class, macro = macro_auc(probs, ds.labels)
        report["auc_per_class"] = {str(k): v for k, v in per_class.items()}
        report["auc_macro"] = macro
    except ValueError:
        report["auc_per_class"] = {}
        report["auc_macro"] = None
    return report


# ---------------------------------------------------------------------------
# artifacts


def save_history(history: History, path) -> None:
    """Per-step loss components as CSV (LF newlines, repr-exact floats)."""
    lines = ["step," + ",".join(LossBreakdown.FIELDS)]
    for i, lb in enumerate(history.steps):
        lines.append(
            f"{i}," + ",".join(repr(getattr(lb, name)) for name in LossBreakdown.FIELDS)
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def metrics_json(report: dict, config: TrainConfig) -> str:
    import json

    payload = dict(report)
    payload["config"] = asdict(config)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
