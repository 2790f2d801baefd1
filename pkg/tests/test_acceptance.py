"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

Every criterion prints a single PASS/FAIL line (collected again in the pytest
terminal summary). Run directly with ``python3 tests/test_acceptance.py`` for
just those lines.
"""

from __future__ import annotations

import math
import random
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from tsrlab import arch, grammar
from tsrlab.errors import DegenerateOutput, GrammarError
from tsrlab.nn import instantiate
from tsrlab.nn import tensor as T
from tsrlab.nn.probe import Box, empirical_rf, grad_check, theoretical_box
from tsrlab.nn.train import train_toy
from tsrlab.synth import random_tree, toy_dataset
from tsrlab.teds import teds, teds_trees, tree_edit_distance

from gen import mutate_unbalanced, small_node_tree
from oracles import brute_force_ted, conv_macs, patchify_params

LINES: list[str] = []


@contextmanager
def criterion(num: int, title: str, budget_s: float):
    """Time the body; it appends human-readable findings to the yielded list."""
    notes: list[str] = []
    t0 = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    except AssertionError as exc:
        notes.append(f"assertion: {exc}")
        raise
    finally:
        elapsed = time.perf_counter() - t0
        slow = elapsed >= budget_s
        status = "PASS" if ok and not slow else "FAIL"
        if slow:
            notes.append(f"over budget ({budget_s:g}s)")
        line = f"[{status}] {num:2d}. {title} ({elapsed:.2f}s) {'; '.join(notes)}"
        LINES.append(line)
        print(line)
        if ok and slow:
            raise AssertionError(f"criterion {num} ran {elapsed:.1f}s, budget {budget_s:g}s")


def test_c01_rf_exactness():
    with criterion(1, "RF exactness for ResNet-18/34/50", 1.0) as notes:
        got = {n: arch.receptive_field(arch.preset(n)) for n in ("resnet18", "resnet34", "resnet50")}
        notes.append(f"rf {got}")
        assert got == {"resnet18": 435, "resnet34": 899, "resnet50": 427}, got


def test_c02_rf_ratio_exactness():
    expected = {
        "resnet18": 97.10,
        "resnet34": 100.00,
        "resnet50": 95.31,
        "linearproj-14": 3.13,
        "linearproj-16": 3.57,
        "linearproj-28": 6.25,
        "linearproj-56": 12.50,
        "linearproj-112": 25.00,
    }
    with criterion(2, "RF ratio exactness at 448", 1.0) as notes:
        got = {n: arch.rf_ratio(arch.preset(n, input_size=448)) for n in expected}
        notes.append(" ".join(f"{v:.2f}" for v in got.values()))
        assert got == expected, got


def test_c03_sequence_length_exactness():
    names = ["resnet18", "resnet34", "resnet50", "linearproj-14", "linearproj-16", "linearproj-28", "linearproj-56", "linearproj-112"]
    with criterion(3, "Sequence length N exactness", 1.0) as notes:
        got = [arch.sequence_length(arch.preset(n)) for n in names]
        notes.append(f"N {got}")
        assert got == [784, 784, 784, 1024, 784, 256, 64, 16], got


def test_c04_parameter_totals():
    targets = {"resnet18": 28.70e6, "linearproj-28": 22.67e6, "convstem": 24.08e6}
    with criterion(4, "Parameter totals within 5% and patchify closed form", 1.0) as notes:
        rel = {}
        for name, target in targets.items():
            n = arch.param_count(arch.preset(name))
            rel[name] = n / target - 1
            notes.append(f"{name} {arch.fmt_m(n)} ({rel[name]:+.1%})")
        patch = arch.params_by_stage(arch.preset("linearproj-28"))["visual_encoder"]
        notes.append(f"patchify {patch:,}")
        assert all(abs(r) <= 0.05 for r in rel.values()), rel
        assert patch == patchify_params(28, 3, 512) == 1_204_736


def test_c05_mac_ordering_and_magnitude():
    with criterion(5, "MAC ordering, ResNet-18 magnitude, hand conv case", 1.0) as notes:
        lp = [arch.mac_count(arch.preset(f"linearproj-{p}")) for p in (14, 16, 28, 56, 112)]
        notes.append("LinearProj " + " > ".join(arch.fmt_g(m) for m in lp))
        hand = arch.mac_count(arch.EncoderSpec("c", (arch.conv(3, 8, 3, padding=1),), (4, 4), 3))
        notes.append(f"hand conv {hand:,}")
        r18 = arch.mac_count(arch.preset("resnet18"))
        notes.append(f"ResNet-18 {arch.fmt_g(r18)} vs 42.22G ({r18 / 42.22e9 - 1:+.1%}, limit +/-20%)")
        assert all(a > b for a, b in zip(lp, lp[1:])), lp
        assert hand == conv_macs(3, 3, 8, 4, 4) == 3456
        assert abs(r18 / 42.22e9 - 1) <= 0.20, f"ResNet-18 MACs {r18} outside 42.22G +/- 20%"


def test_c06_teds_oracle_equivalence():
    with criterion(6, "TEDS: Zhang-Shasha vs exhaustive search, self-similarity", 120.0) as notes:
        rng = random.Random(2024)
        mismatches = 0
        for _ in range(1000):
            a, b = small_node_tree(rng, 6), small_node_tree(rng, 6)
            mismatches += tree_edit_distance(a, b) != brute_force_ted(a, b)
        nrng = np.random.default_rng(2024)
        not_one = 0
        for _ in range(1000):
            seq = grammar.tokenize(random_tree(nrng, max_rows=6, max_cols=6, span_prob=0.3).serialize())
            not_one += teds(seq, seq) != 1.0
        notes.append(f"1000 pairs, {mismatches} disagreements; 1000 self-pairs, {not_one} below 1")
        assert mismatches == 0 and not_one == 0


def test_c07_vocabulary_and_grammar():
    with criterion(7, "Vocabulary size, round trip, mutation rejection", 60.0) as notes:
        assert len(grammar.vocabulary()) == 32
        nrng = np.random.default_rng(7)
        failures = 0
        for _ in range(10_000):
            tree = random_tree(nrng, max_rows=6, max_cols=6, span_prob=0.3)
            seq = grammar.tokenize(tree.serialize())
            back = grammar.tokenize(grammar.split_structure(grammar.detokenize(seq)))
            failures += back != seq or grammar.parse(back) != tree
        rng = random.Random(7)
        accepted = 0
        n_mut = 2000
        for _ in range(n_mut):
            bad = mutate_unbalanced(random_tree(nrng, span_prob=0.3).serialize(), rng)
            try:
                grammar.parse(bad)
                accepted += 1
            except GrammarError:
                pass
        notes.append(f"|V|=32; 10000 round trips, {failures} failures; {n_mut - accepted}/{n_mut} mutants rejected")
        assert failures == 0 and accepted == 0


def _random_stack(rng: random.Random, size: int) -> arch.EncoderSpec:
    layers, c = [], 3
    for _ in range(rng.randint(1, 5)):
        if rng.random() < 0.3:
            layers.append(arch.patchify(c, 4, rng.choice((2, 3, 4))))
        else:
            k, s, d = rng.choice((1, 3, 5, 7)), rng.choice((1, 2)), rng.choice((1, 1, 2))
            layers.append(arch.conv(c, 4, k, stride=s, padding=rng.randint(0, d * (k - 1) // 2), dilation=d))
        c = 4
    return arch.EncoderSpec("stack", tuple(layers), (size, size), 3)


def test_c08_empirical_rf():
    with criterion(8, "Empirical RF equals recursion RF", 120.0) as notes:
        rng = random.Random(8)
        stacks, checked, interior, bad = 0, 0, 0, []
        while stacks < 20:
            e = _random_stack(rng, 48)
            try:
                g = arch.trace_geometry(e)[-1]
            except DegenerateOutput:
                continue
            stacks += 1
            h, w = g.out_size
            for pos in {(0, 0), (h // 2, w // 2), (h - 1, w - 1), (rng.randrange(h), rng.randrange(w))}:
                box = empirical_rf(e, pos)
                checked += 1
                if box != theoretical_box(e, pos):
                    bad.append((e, pos))
                top, left = pos[0] * g.jump + g.start, pos[1] * g.jump + g.start
                if top >= 0 and left >= 0 and top + g.rf <= 48 and left + g.rf <= 48:
                    interior += 1
                    if box != Box(top, left, top + g.rf, left + g.rf):
                        bad.append((e, pos))
        for name in ("toy-convstem", "toy-linearproj"):
            m = instantiate(name)
            h, w = arch.trace_geometry(m.spec)[-1].out_size
            for pos in [(0, 0), (h // 2, w // 2), (h - 1, w - 1)]:
                checked += 1
                box = empirical_rf(m, pos)
                if box != theoretical_box(m.spec, pos):
                    bad.append((name, pos))
                if 0 < pos[0] < h - 1 and box.height != arch.receptive_field(m.spec):
                    bad.append((name, pos))
        notes.append(f"{stacks} random stacks + 2 toy presets, {checked} positions ({interior} unclipped), {len(bad)} mismatches")
        assert not bad, bad[:3]


def test_c09_gradient_correctness():
    with criterion(9, "Gradient check, toy LinearProj and ConvStem, float64", 300.0) as notes:
        img = np.random.default_rng(9).normal(size=(3, 32, 32))
        gt = toy_dataset(1, seed=9)[0][1]
        worst = {}
        for name in ("toy-linearproj", "toy-convstem"):
            res = grad_check(instantiate(name, seed=0), img, gt, n_coords=100)
            worst[name] = res.max_rel_error
            notes.append(f"{name} max rel err {res.max_rel_error:.2e} over {res.n_coords} coords ({res.n_kinks} kinks skipped)")
        assert all(v < 1e-4 for v in worst.values()), worst


def test_c10_loss_sanity_and_overfit():
    with criterion(10, "ln 32 at uniform logits; toy overfit to < 0.01 and exact decode", 600.0) as notes:
        data = toy_dataset(8, seed=0)
        m = instantiate("toy-linearproj", seed=0)
        m.params["head.weight"].data[...] = 0.0
        m.params["head.bias"].data[...] = 0.0
        img, gt = data[0]
        per_step = -T.log_softmax(m.logits(img, gt.ids[:-1]).data)[np.arange(len(gt) - 1), list(gt.ids[1:])]
        dev = float(np.max(np.abs(per_step - math.log(32))))
        notes.append(f"per-step |loss - ln32| <= {dev:.1e}")
        assert dev <= 1e-3

        m = instantiate("toy-linearproj", seed=0)
        curve = train_toy(m, data, steps=500, lr=1e-3)
        first_below = next((i for i, v in enumerate(curve) if v < 0.01), None)
        exact = sum(m.greedy_decode(x, len(y) + 8) == y for x, y in data)
        notes.append(f"final loss {curve[-1]:.4f} (first < 0.01 at step {first_below}); {exact}/8 exact decodes")
        assert min(curve) < 0.01 and exact == 8


def test_c11_cross_module_reconciliation():
    with criterion(11, "micro_nn scalar count equals analyzer param_count", 60.0) as notes:
        diffs = {}
        for name in arch.preset_names():
            spec = arch.preset(name, scale=None if name.startswith("toy-") else "toy")
            model = instantiate(spec)
            if model.n_scalars() != arch.param_count(spec):
                diffs[name] = (model.n_scalars(), arch.param_count(spec))
            del model
        notes.append(f"{len(arch.preset_names())} presets at toy transformer scale, {len(diffs)} differ")
        assert not diffs, diffs


if __name__ == "__main__":
    failed = 0
    for fn in [v for k, v in sorted(globals().items()) if k.startswith("test_c")]:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
