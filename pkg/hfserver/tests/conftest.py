from __future__ import annotations

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import (
    BertConfig,
    BertForMaskedLM,
    GPT2Config,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
)

VOCAB_SIZE = 64


def _tiny_tokenizer() -> PreTrainedTokenizerFast:
    words = {f"w{i}": i for i in range(VOCAB_SIZE - 4)}
    words["[PAD]"] = VOCAB_SIZE - 4
    words["[UNK]"] = VOCAB_SIZE - 3
    words["[MASK]"] = VOCAB_SIZE - 2
    words["[EOS]"] = VOCAB_SIZE - 1
    tok = Tokenizer(WordLevel(words, unk_token="[UNK]"))
    tok.pre_tokenizer = Whitespace()
    return PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="[PAD]",
        unk_token="[UNK]",
        mask_token="[MASK]",
        eos_token="[EOS]",
    )


@pytest.fixture(scope="session")
def masked_checkpoint(tmp_path_factory) -> str:
    """Tiny random-weight masked LM saved through the standard checkpoint path."""
    torch.manual_seed(1234)
    path = tmp_path_factory.mktemp("ckpt") / "tiny-masked"
    config = BertConfig(
        vocab_size=VOCAB_SIZE,
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=96,
    )
    model = BertForMaskedLM(config)
    model.save_pretrained(path)
    _tiny_tokenizer().save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def causal_checkpoint(tmp_path_factory) -> str:
    """Tiny random-weight causal LM saved through the standard checkpoint path."""
    torch.manual_seed(4321)
    path = tmp_path_factory.mktemp("ckpt") / "tiny-causal"
    config = GPT2Config(
        vocab_size=VOCAB_SIZE,
        n_embd=32,
        n_layer=2,
        n_head=2,
        n_positions=96,
    )
    model = GPT2LMHeadModel(config)
    model.save_pretrained(path)
    _tiny_tokenizer().save_pretrained(path)
    return str(path)
