import copy

import pytest
import torch

from gtcycle.corpus import ParallelCorpus, ParallelExample, UnlabeledCorpus
from gtcycle.graph_codec import (
    G2T_TOKEN,
    T2G_TOKEN,
    KnowledgeGraph,
    Triple,
    linearize_graph,
    prefix_task,
)
from gtcycle.model import ModelConfig, Seq2SeqModel, nll_loss
from gtcycle.tokenizer import BOS_ID, EOS_ID, PAD_ID, build_vocab, encode
from gtcycle.training import (
    CycleState,
    EarlyStopper,
    TrainConfig,
    TrainingError,
    _split_validation,
    collate,
    cycle_step_losses,
    cycle_train,
    finetune,
    make_supervised_pairs,
    strip_task_surfaces,
    teacher_forced_token_accuracy,
    validation_loss,
)


def make_world():
    """Two parallel examples whose texts and linearizations all encode to
    the same target length, so batch means and the pooled mean coincide."""
    examples = (
        ParallelExample(
            KnowledgeGraph((Triple("alice", "likes", "bob"),)),
            "alice likes bob here now ok",
        ),
        ParallelExample(
            KnowledgeGraph((Triple("carol", "helps", "dave"),)),
            "carol helps dave here now ok",
        ),
    )
    corpus = ParallelCorpus(examples)
    strings = [e.text for e in examples] + [linearize_graph(e.graph) for e in examples]
    vocab = build_vocab(strings, 48)
    torch.manual_seed(5)
    config = ModelConfig(
        vocab_size=len(vocab),
        d_model=16,
        n_heads=2,
        n_layers_enc=1,
        n_layers_dec=1,
        d_ff=32,
        max_len=32,
        dropout_rate=0.0,
    )
    return corpus, vocab, Seq2SeqModel(config)


def test_train_config_defaults_pinned():
    cfg = TrainConfig()
    assert cfg.batch_size == 8
    assert cfg.accumulation_steps == 4
    assert cfg.lr_finetune == 2.0e-4
    assert cfg.lr_cycle == 1.0e-5
    assert cfg.max_epochs_finetune == 50
    assert cfg.max_epochs_cycle == 30
    assert cfg.patience == 5
    assert cfg.cycle_steps == 3
    assert cfg.synthetic_per_iteration == 30000
    assert cfg.optimizer == "adam"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"batch_size": 0},
        {"patience": 0},
        {"cycle_steps": 0},
        {"lr_finetune": 0.0},
        {"lr_cycle": -1.0},
        {"optimizer": "rmsprop"},
        {"val_fraction": 1.0},
        {"val_fraction": -0.1},
    ],
)
def test_train_config_rejects_bad_values(kwargs):
    with pytest.raises(TrainingError):
        TrainConfig(**kwargs)


def test_early_stopper_counts_strict_improvements_only():
    stopper = EarlyStopper(patience=5)
    values = [3.0, 2.9, 2.9, 2.9, 2.9, 2.9, 2.9]
    stops = [stopper.update(v) for v in values]
    assert stops == [False] * 6 + [True]
    assert stopper.best_epoch == 2
    assert stopper.best_value == 2.9
    assert stopper.epoch == 7


def test_make_supervised_pairs_prefixes_inputs_only():
    corpus, _, _ = make_world()
    pairs = make_supervised_pairs(corpus)
    assert len(pairs) == 2 * len(corpus)
    lin = linearize_graph(corpus.examples[0].graph)
    assert pairs[0] == (prefix_task(G2T_TOKEN, lin), corpus.examples[0].text)
    assert pairs[1] == (prefix_task(T2G_TOKEN, corpus.examples[0].text), lin)
    for source, target in pairs:
        assert source.startswith(("generate text:", "generate graph:"))
        assert not target.startswith(("generate text:", "generate graph:"))


def test_collate_shifts_targets_and_pads():
    _, vocab, _ = make_world()
    pairs = [("alice likes", "bob"), ("alice", "likes bob dave")]
    src, tgt_in, tgt_out = collate(vocab, pairs, max_len=32)
    row0 = encode(vocab, "bob", 32).ids
    row1 = encode(vocab, "likes bob dave", 32).ids
    assert src.shape == (2, 3) and tgt_in.shape == (2, 4)
    assert tuple(src[1].tolist()) == encode(vocab, "alice", 32).ids + (PAD_ID,)
    assert tuple(tgt_out[0].tolist()) == row0 + (PAD_ID, PAD_ID)
    assert tuple(tgt_out[1].tolist()) == row1
    assert tuple(tgt_in[0].tolist()) == (BOS_ID,) + row0[:-1] + (PAD_ID, PAD_ID)
    assert tuple(tgt_in[1].tolist()) == (BOS_ID,) + row1[:-1]
    assert row0[-1] == EOS_ID and row1[-1] == EOS_ID


def test_collate_rejects_empty_batch():
    _, vocab, _ = make_world()
    with pytest.raises(TrainingError):
        collate(vocab, [], max_len=32)


def test_split_validation_variants():
    corpus, _, _ = make_world()
    pairs = make_supervised_pairs(corpus) * 2  # 8 pairs
    cfg = TrainConfig(val_fraction=0.25, seed=1)
    train_pairs, val_pairs = _split_validation(pairs, None, cfg)
    assert len(val_pairs) == 2 and len(train_pairs) == 6
    assert sorted(train_pairs + val_pairs) == sorted(pairs)
    again = _split_validation(pairs, None, cfg)
    assert again == (train_pairs, val_pairs)

    zero_cfg = TrainConfig(val_fraction=0.0)
    assert _split_validation(pairs, None, zero_cfg) == (pairs, pairs)

    dev = ParallelCorpus((corpus.examples[0],))
    _, dev_val = _split_validation(pairs, dev, cfg)
    assert dev_val == make_supervised_pairs(dev)


def test_validation_loss_is_mean_of_batch_means():
    corpus, vocab, model = make_world()
    pairs = make_supervised_pairs(corpus)[:3]
    cfg = TrainConfig(batch_size=2, val_fraction=0.0)
    model.train()
    value = validation_loss(model, vocab, pairs, cfg)
    assert model.training  # mode restored
    model.eval()
    with torch.no_grad():
        parts = []
        for batch in (pairs[:2], pairs[2:]):
            src, tgt_in, tgt_out = collate(vocab, batch, cfg.max_len)
            parts.append(float(nll_loss(model(src, tgt_in), tgt_out)))
    assert value == pytest.approx(sum(parts) / 2, abs=1e-9)


def test_validation_loss_rejects_empty():
    _, vocab, model = make_world()
    with pytest.raises(TrainingError):
        validation_loss(model, vocab, [], TrainConfig())


def test_accumulated_groups_match_one_big_batch():
    # equal-length targets make mean-of-means equal the pooled mean, so a
    # 2-batch accumulation group and one full batch must take the same
    # SGD step
    corpus, vocab, model = make_world()
    base = copy.deepcopy(model)
    shared = dict(
        lr_finetune=0.1,
        max_epochs_finetune=1,
        optimizer="sgd",
        val_fraction=0.0,
        seed=3,
    )
    model_a, _ = finetune(
        copy.deepcopy(base),
        vocab,
        corpus,
        TrainConfig(batch_size=2, accumulation_steps=2, **shared),
    )
    model_b, _ = finetune(
        copy.deepcopy(base),
        vocab,
        corpus,
        TrainConfig(batch_size=4, accumulation_steps=1, **shared),
    )
    moved = False
    for p_a, p_b, p_0 in zip(
        model_a.parameters(), model_b.parameters(), base.parameters()
    ):
        assert torch.allclose(p_a, p_b, atol=1e-6)
        moved = moved or not torch.equal(p_a, p_0)
    assert moved


def test_finetune_early_stops_and_restores_best_weights(monkeypatch):
    corpus, vocab, model = make_world()
    script = iter([3.0, 2.0, 2.5, 2.6, 2.7, 2.8, 2.9])
    seen_states = []

    def fake_validation(model, vocab, pairs, config):
        seen_states.append({k: v.clone() for k, v in model.state_dict().items()})
        return next(script)

    monkeypatch.setattr("gtcycle.training.validation_loss", fake_validation)
    cfg = TrainConfig(
        batch_size=4, accumulation_steps=1, patience=2, val_fraction=0.0, seed=0
    )
    trained, history = finetune(model, vocab, corpus, cfg)
    assert len(seen_states) == 4  # stopped after two epochs without improvement
    assert history.val_losses == (3.0, 2.0, 2.5, 2.6)
    assert history.best_epoch == 2
    assert history.best_val_loss == 2.0
    assert history.stopped_early is True
    assert len(history.train_losses) == 4
    best = seen_states[1]
    for key, value in trained.state_dict().items():
        assert torch.equal(value, best[key])


def test_finetune_rejects_empty_corpus():
    _, vocab, model = make_world()
    with pytest.raises(TrainingError):
        finetune(model, vocab, ParallelCorpus(()), TrainConfig())


def test_finetune_overfits_and_scores_high_accuracy(tmp_path):
    corpus, vocab, model = make_world()
    log = tmp_path / "log.tsv"
    cfg = TrainConfig(
        batch_size=4,
        accumulation_steps=1,
        lr_finetune=5e-3,
        max_epochs_finetune=120,
        patience=120,
        val_fraction=0.0,
        seed=0,
    )
    trained, history = finetune(model, vocab, corpus, cfg, log_path=log)
    pairs = make_supervised_pairs(corpus)
    accuracy = teacher_forced_token_accuracy(trained, vocab, pairs, cfg)
    assert accuracy > 0.9
    assert history.train_losses[-1] < history.train_losses[0]
    lines = log.read_text().splitlines()
    assert lines[0] == "epoch\ttrain_loss\tval_loss"
    assert len(lines) == 1 + len(history.train_losses)
    assert all(len(line.split("\t")) == 3 for line in lines[1:])


def test_token_accuracy_rejects_empty():
    _, vocab, model = make_world()
    with pytest.raises(TrainingError):
        teacher_forced_token_accuracy(model, vocab, [], TrainConfig())


def test_strip_task_surfaces():
    assert strip_task_surfaces("generate text: hello") == "hello"
    assert strip_task_surfaces("generate graph: generate text: x") == "x"
    assert strip_task_surfaces("plain words") == "plain words"
    assert strip_task_surfaces("  generate graph:") == ""


def test_cycle_losses_match_supervised_when_generation_is_truthful():
    corpus, vocab, model = make_world()
    model.eval()
    first, second = corpus.examples[0], corpus.examples[1]
    lin_first = linearize_graph(first.graph)
    lin_second = linearize_graph(second.graph)

    def truthful(model, vocab, source, config):
        if source.startswith(T2G_TOKEN.surface):
            return lin_first  # true graph for first.text
        return second.text  # true text for second.graph

    cfg = TrainConfig(val_fraction=0.0)
    losses = cycle_step_losses(
        model, vocab, [first.text], [second.graph], cfg, generate_fn=truthful
    )
    with torch.no_grad():
        src, tgt_in, tgt_out = collate(
            vocab, [(prefix_task(G2T_TOKEN, lin_first), first.text)], cfg.max_len
        )
        sup_g2t = float(nll_loss(model(src, tgt_in), tgt_out))
        src, tgt_in, tgt_out = collate(
            vocab, [(prefix_task(T2G_TOKEN, second.text), lin_second)], cfg.max_len
        )
        sup_t2g = float(nll_loss(model(src, tgt_in), tgt_out))
    assert float(losses["cycle_g2t"].detach()) == pytest.approx(sup_g2t, abs=1e-6)
    assert float(losses["cycle_t2g"].detach()) == pytest.approx(sup_t2g, abs=1e-6)
    assert float(losses["total"].detach()) == pytest.approx(sup_g2t + sup_t2g, abs=1e-6)


def test_cycle_generation_runs_without_gradients():
    corpus, vocab, model = make_world()
    calls = []

    def probe(model, vocab, source, config):
        assert not torch.is_grad_enabled()
        calls.append(source)
        return "alice likes bob"

    losses = cycle_step_losses(
        model,
        vocab,
        [corpus.examples[0].text, corpus.examples[1].text],
        [corpus.examples[0].graph],
        TrainConfig(),
        generate_fn=probe,
    )
    assert len(calls) == 3
    assert losses["total"].requires_grad


def test_cycle_losses_zero_on_empty_pools():
    _, vocab, model = make_world()
    losses = cycle_step_losses(model, vocab, [], [], TrainConfig())
    assert float(losses["total"]) == 0.0
    assert float(losses["cycle_g2t"]) == 0.0


def test_cycle_losses_skip_empty_synthetic_output():
    corpus, vocab, model = make_world()

    def silent(model, vocab, source, config):
        return "generate text:"  # strips to nothing

    losses = cycle_step_losses(
        model, vocab, [corpus.examples[0].text], [], TrainConfig(), generate_fn=silent
    )
    assert float(losses["total"]) == 0.0


def test_cycle_train_state_and_log(tmp_path):
    corpus, vocab, model = make_world()
    texts = tuple(e.text for e in corpus) + ("bob helps alice here now ok",)
    graphs = (
        KnowledgeGraph((Triple("bob", "likes", "carol"),)),
        KnowledgeGraph((Triple("dave", "helps", "alice"),)),
    )
    unlabeled = UnlabeledCorpus(texts=texts, graphs=graphs)

    def canned(model, vocab, source, config):
        return "alice likes bob"

    cfg = TrainConfig(
        batch_size=4,
        accumulation_steps=1,
        lr_cycle=1e-3,
        max_epochs_cycle=2,
        patience=5,
        cycle_steps=2,
        synthetic_per_iteration=4,
        optimizer="sgd",
        val_fraction=0.0,
        seed=2,
    )
    log = tmp_path / "cycle.tsv"
    trained, state = cycle_train(
        model, vocab, unlabeled, corpus, cfg, log_path=log, generate_fn=canned
    )
    assert isinstance(state, CycleState)
    assert len(state.histories) == 2
    assert state.n_texts == (3, 3)
    assert state.n_graphs == (2, 2)
    assert len(state.cycle_losses) == 2
    for history, cycle_track in zip(state.histories, state.cycle_losses):
        assert len(history.train_losses) == 2
        assert len(cycle_track) == len(history.train_losses)
        assert all(c >= 0.0 for c in cycle_track)
    lines = log.read_text().splitlines()
    assert lines[0] == "iteration\tepoch\ttrain_loss\tcycle_loss\tval_loss"
    assert len(lines) == 5
    assert all(len(line.split("\t")) == 5 for line in lines[1:])


def test_cycle_train_input_validation():
    corpus, vocab, model = make_world()
    pools = UnlabeledCorpus(texts=("t",), graphs=())
    with pytest.raises(TrainingError):
        cycle_train(model, vocab, pools, ParallelCorpus(()), TrainConfig())
    with pytest.raises(TrainingError):
        cycle_train(
            model, vocab, UnlabeledCorpus(texts=(), graphs=()), corpus, TrainConfig()
        )
