"""Synthetic families of related sequence-transduction tasks.

Every task maps a tagged source sequence to a shared "target language":
target sentences are random token strings over a common content alphabet,
and each task's source side is a cipher of the target (a bijective token
substitution followed by swapping adjacent token pairs).  Paired tasks
share a configurable fraction of their substitution rules, so a model
that learned the big task transfers to the small one, mimicking related
languages with very different corpus sizes.

Vocabulary layout: ``0=PAD, 1=BOS, 2=EOS``, then one tag token per task,
then the content alphabet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInputError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
FIRST_TAG_ID = 3

ROLES = ("hrl", "lrl")


class ExamplePair(NamedTuple):
    source: tuple[int, ...]  # tag-prefixed cipher of the target
    target: tuple[int, ...]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    tag_token: int
    role: str
    transform_seed: int
    corpus_size: int
    relatedness: float

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidInputError(f"unknown role {self.role!r}")
        if self.corpus_size < 1:
            raise InvalidInputError("corpus_size must be >= 1")
        if not 0.0 <= self.relatedness <= 1.0:
            raise InvalidInputError("relatedness must be in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "tag_token": self.tag_token,
            "role": self.role,
            "transform_seed": self.transform_seed,
            "corpus_size": self.corpus_size,
            "relatedness": self.relatedness,
        }


@dataclass
class SplitCorpora:
    train: list[ExamplePair]
    dev: list[ExamplePair]
    test: list[ExamplePair]


@dataclass
class TaskFamily:
    seed: int
    specs: list[TaskSpec]
    corpora: dict[str, SplitCorpora]
    substitutions: dict[str, dict[int, int]]  # content index -> content index
    content_tokens: int
    min_len: int
    max_len: int
    dev_size: int
    test_size: int

    @property
    def task_ids(self) -> list[str]:
        return [s.id for s in self.specs]

    @property
    def roles(self) -> dict[str, str]:
        return {s.id: s.role for s in self.specs}

    @property
    def content_offset(self) -> int:
        return FIRST_TAG_ID + len(self.specs)

    @property
    def vocab_size(self) -> int:
        return self.content_offset + self.content_tokens

    def spec(self, task_id: str) -> TaskSpec:
        for s in self.specs:
            if s.id == task_id:
                return s
        raise InvalidInputError(f"unknown task {task_id!r}")

    def task_by_tag(self) -> dict[int, str]:
        return {s.tag_token: s.id for s in self.specs}

    def max_seq_len(self) -> int:
        longest = 0
        for split in self.corpora.values():
            for part in (split.train, split.dev, split.test):
                for ex in part:
                    longest = max(longest, len(ex.source), len(ex.target) + 1)
        return longest

    def min_source_len(self) -> int:
        return min(
            len(ex.source)
            for split in self.corpora.values()
            for ex in split.train
        )

    def rule_overlap(self, task_a: str, task_b: str) -> float:
        """Fraction of content tokens on which two tasks' substitution
        rules agree."""
        sa, sb = self.substitutions[task_a], self.substitutions[task_b]
        agree = sum(1 for k in sa if sa[k] == sb[k])
        return agree / self.content_tokens


def _swap_adjacent(tokens: list[int]) -> list[int]:
    out = list(tokens)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _derange_against(base: list[int], values: list[int], rng) -> list[int]:
    """Permute ``values`` so no position keeps its ``base`` value.

    With a single position no derangement exists; the forced agreement is
    accepted (it stays within the 1/n_rules overlap tolerance).
    """
    if len(values) <= 1:
        return list(values)
    arr = np.array(values)
    for _ in range(10_000):
        perm = rng.permutation(arr)
        if not np.any(perm == np.array(base)):
            return [int(v) for v in perm]
    raise ConfigError("could not construct a derangement of substitution rules")


def _build_pair_substitutions(content_tokens, relatedness, rng):
    """HRL substitution is a random permutation of the content alphabet;
    the LRL agrees with it on a ``relatedness`` fraction of tokens and is
    deranged against it elsewhere."""
    hrl = [int(v) for v in rng.permutation(content_tokens)]
    n_shared = int(round(relatedness * content_tokens))
    shared = set(int(i) for i in rng.choice(content_tokens, size=n_shared, replace=False))
    rest = [i for i in range(content_tokens) if i not in shared]
    rest_values = _derange_against([hrl[i] for i in rest], [hrl[i] for i in rest], rng)
    lrl = list(hrl)
    for i, v in zip(rest, rest_values):
        lrl[i] = v
    return {i: hrl[i] for i in range(content_tokens)}, {i: lrl[i] for i in range(content_tokens)}


def _generate_corpus(spec, subst, family_params, rng):
    content_offset, content_tokens, min_len, max_len, dev_size, test_size = family_params
    needed = spec.corpus_size + dev_size + test_size
    seen: set[tuple[int, ...]] = set()
    examples: list[ExamplePair] = []
    attempts = 0
    while len(examples) < needed:
        attempts += 1
        if attempts > needed * 200:
            raise ConfigError(
                f"task {spec.id!r}: cannot draw {needed} distinct targets from "
                f"{content_tokens} content tokens at lengths {min_len}..{max_len}"
            )
        length = int(rng.integers(min_len, max_len + 1))
        target = tuple(
            int(content_offset + t) for t in rng.integers(content_tokens, size=length)
        )
        if target in seen:
            continue
        seen.add(target)
        ciphered = [content_offset + subst[t - content_offset] for t in target]
        source = (spec.tag_token, *(_swap_adjacent(ciphered)))
        examples.append(ExamplePair(source=source, target=target))
    return SplitCorpora(
        train=examples[:spec.corpus_size],
        dev=examples[spec.corpus_size:spec.corpus_size + dev_size],
        test=examples[spec.corpus_size + dev_size:needed],
    )


def generate_task_family(
    seed: int,
    pairs=None,
    *,
    single_size: int | None = None,
    content_tokens: int = 20,
    min_len: int = 6,
    max_len: int = 12,
    dev_size: int = 200,
    test_size: int = 200,
) -> TaskFamily:
    """Build a deterministic task family from a seed.

    ``pairs`` is a list of ``(hrl_size, lrl_size, relatedness)`` tuples;
    alternatively ``single_size`` builds a one-task family (used for the
    metric-comparison runs).  Regenerating with the same arguments yields
    bit-identical corpora.
    """
    if (pairs is None or len(pairs) == 0) == (single_size is None):
        raise ConfigError("specify either task pairs or a single task size")
    if content_tokens < 2:
        raise ConfigError("need at least 2 content tokens")
    if not 1 <= min_len <= max_len:
        raise ConfigError("need 1 <= min_len <= max_len")
    if dev_size < 0 or test_size < 0:
        raise ConfigError("dev/test sizes must be >= 0")

    specs: list[TaskSpec] = []
    substitutions: dict[str, dict[int, int]] = {}

    if single_size is not None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 307, 0]))
        spec = TaskSpec(
            id="solo",
            tag_token=FIRST_TAG_ID,
            role="hrl",
            transform_seed=seed,
            corpus_size=int(single_size),
            relatedness=1.0,
        )
        specs.append(spec)
        hrl_sub, _ = _build_pair_substitutions(content_tokens, 1.0, rng)
        substitutions[spec.id] = hrl_sub
    else:
        normalized = []
        for p in pairs:
            if isinstance(p, dict):
                normalized.append((p["hrl_size"], p["lrl_size"], p["relatedness"]))
            else:
                normalized.append(tuple(p))
        many = len(normalized) > 1
        for pi, (hrl_size, lrl_size, relatedness) in enumerate(normalized):
            if lrl_size > hrl_size:
                raise ConfigError("within a pair the LRL may not outsize the HRL")
            rng = np.random.default_rng(np.random.SeedSequence([seed, 307, pi]))
            hrl_sub, lrl_sub = _build_pair_substitutions(content_tokens, relatedness, rng)
            suffix = str(pi + 1) if many else ""
            hrl_id, lrl_id = f"hrl{suffix}", f"lrl{suffix}"
            specs.append(TaskSpec(hrl_id, FIRST_TAG_ID + 2 * pi, "hrl", seed, int(hrl_size), float(relatedness)))
            specs.append(TaskSpec(lrl_id, FIRST_TAG_ID + 2 * pi + 1, "lrl", seed, int(lrl_size), float(relatedness)))
            substitutions[hrl_id] = hrl_sub
            substitutions[lrl_id] = lrl_sub

    tags = [s.tag_token for s in specs]
    if len(set(tags)) != len(tags):
        raise ConfigError("duplicate tag allocation")

    family = TaskFamily(
        seed=seed,
        specs=specs,
        corpora={},
        substitutions=substitutions,
        content_tokens=content_tokens,
        min_len=min_len,
        max_len=max_len,
        dev_size=dev_size,
        test_size=test_size,
    )
    params = (family.content_offset, content_tokens, min_len, max_len, dev_size, test_size)
    for ti, spec in enumerate(specs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 211, ti]))
        family.corpora[spec.id] = _generate_corpus(spec, substitutions[spec.id], params, rng)
    return family


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def make_batch(family: TaskFamily, task_id: str, batch_tokens: int, rng) -> list[ExamplePair]:
    """Monolingual batch: sample training examples with replacement until
    the next draw would push the source-token total past ``batch_tokens``.

    The batch always contains at least one example (misfitting draws are
    skipped while the batch is still empty).
    """
    corpus = family.corpora[task_id].train
    if not corpus:
        raise InvalidInputError(f"task {task_id!r} has an empty corpus")
    shortest = min(len(ex.source) for ex in corpus)
    if batch_tokens < shortest:
        raise ConfigError(
            f"batch_tokens={batch_tokens} is smaller than the shortest "
            f"example ({shortest} tokens) of task {task_id!r}"
        )
    batch: list[ExamplePair] = []
    total = 0
    while True:
        ex = corpus[int(rng.integers(len(corpus)))]
        if total + len(ex.source) > batch_tokens:
            if batch:
                return batch
            continue
        batch.append(ex)
        total += len(ex.source)


def make_shuffled_batch(family: TaskFamily, batch_tokens: int, rng) -> list[ExamplePair]:
    """Multilingual batch: every example slot's task is drawn uniformly
    across tasks, then an example is sampled from that task's corpus."""
    from .scheduler import shuffled_batch_plan

    ids = family.task_ids
    shortest = family.min_source_len()
    if batch_tokens < shortest:
        raise ConfigError(
            f"batch_tokens={batch_tokens} is smaller than the shortest example "
            f"({shortest} tokens)"
        )
    upper = batch_tokens // shortest + 1
    plan = shuffled_batch_plan(ids, upper, rng)
    batch: list[ExamplePair] = []
    total = 0
    for task_id in plan:
        corpus = family.corpora[task_id].train
        ex = corpus[int(rng.integers(len(corpus)))]
        if total + len(ex.source) > batch_tokens:
            if batch:
                return batch
            continue
        batch.append(ex)
        total += len(ex.source)
    return batch


def count_examples_by_task(family: TaskFamily, batch) -> dict[str, int]:
    by_tag = family.task_by_tag()
    counts: dict[str, int] = {}
    for ex in batch:
        task = by_tag[ex.source[0]]
        counts[task] = counts.get(task, 0) + 1
    return counts


def pad_batch(pairs, pad_id: int = PAD_ID) -> dict[str, np.ndarray]:
    """Pack example pairs into padded integer arrays.

    Decoder input is ``BOS + target``; decoder output is ``target + EOS``.
    """
    if not pairs:
        raise InvalidInputError("cannot pad an empty batch")
    n = len(pairs)
    src_len = max(len(ex.source) for ex in pairs)
    tgt_len = max(len(ex.target) for ex in pairs) + 1
    src = np.full((n, src_len), pad_id, dtype=np.int64)
    tgt_in = np.full((n, tgt_len), pad_id, dtype=np.int64)
    tgt_out = np.full((n, tgt_len), pad_id, dtype=np.int64)
    for i, ex in enumerate(pairs):
        src[i, :len(ex.source)] = ex.source
        tgt_in[i, 0] = BOS_ID
        tgt_in[i, 1:len(ex.target) + 1] = ex.target
        tgt_out[i, :len(ex.target)] = ex.target
        tgt_out[i, len(ex.target)] = EOS_ID
    return {"src": src, "tgt_in": tgt_in, "tgt_out": tgt_out}


# ---------------------------------------------------------------------------
# Corpus export / import (line-oriented text files)
# ---------------------------------------------------------------------------

_FAMILY_MANIFEST = "family.json"


def export_family(family: TaskFamily, out_dir) -> Path:
    """Write the family to ``out_dir``: a ``family.json`` manifest plus
    one tab-separated token file per task and split (source TAB target,
    tokens space-separated, tag included)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "seed": family.seed,
        "content_tokens": family.content_tokens,
        "min_len": family.min_len,
        "max_len": family.max_len,
        "dev_size": family.dev_size,
        "test_size": family.test_size,
        "tasks": [
            dict(s.as_dict(), substitution={str(k): v for k, v in family.substitutions[s.id].items()})
            for s in family.specs
        ],
    }
    (out / _FAMILY_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    for spec in family.specs:
        split = family.corpora[spec.id]
        for split_name, examples in (("train", split.train), ("dev", split.dev), ("test", split.test)):
            lines = [
                " ".join(map(str, ex.source)) + "\t" + " ".join(map(str, ex.target))
                for ex in examples
            ]
            (out / f"{spec.id}.{split_name}.tsv").write_text("\n".join(lines) + "\n")
    return out


def load_family(in_dir) -> TaskFamily:
    """Inverse of :func:`export_family`."""
    root = Path(in_dir)
    manifest_path = root / _FAMILY_MANIFEST
    if not manifest_path.exists():
        raise ConfigError(f"no {_FAMILY_MANIFEST} in {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != 1:
        raise ConfigError(f"unsupported corpus version {manifest.get('version')!r}")
    specs = []
    substitutions = {}
    for t in manifest["tasks"]:
        sub = {int(k): int(v) for k, v in t.pop("substitution").items()}
        spec = TaskSpec(**t)
        specs.append(spec)
        substitutions[spec.id] = sub
    family = TaskFamily(
        seed=manifest["seed"],
        specs=specs,
        corpora={},
        substitutions=substitutions,
        content_tokens=manifest["content_tokens"],
        min_len=manifest["min_len"],
        max_len=manifest["max_len"],
        dev_size=manifest["dev_size"],
        test_size=manifest["test_size"],
    )

    def read_split(path: Path) -> list[ExamplePair]:
        examples = []
        for line in path.read_text().splitlines():
            if not line:
                continue
            src_text, tgt_text = line.split("\t")
            examples.append(ExamplePair(
                source=tuple(int(v) for v in src_text.split()),
                target=tuple(int(v) for v in tgt_text.split()),
            ))
        return examples

    for spec in specs:
        family.corpora[spec.id] = SplitCorpora(
            train=read_split(root / f"{spec.id}.train.tsv"),
            dev=read_split(root / f"{spec.id}.dev.tsv"),
            test=read_split(root / f"{spec.id}.test.tsv"),
        )
    return family
