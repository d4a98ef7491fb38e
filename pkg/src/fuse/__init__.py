"""Training-free adapter between language-model embedding spaces.

Maps gradients from one model's input-embedding space into another's, even
across different tokenizers, by bucketing whitespace-delimited words into
order-3 token tensors and precomputing pseudoinverse products under the
t-product. Ships with desk-scale tokenizers, synthetic models with analytic
loss heads, a finite-difference oracle, and a discrete prompt optimizer.
"""

from .adapter import (
    EmbeddingSeq,
    WordTensorList,
    backward,
    backward_shared,
    embed_sequence,
    forward,
    forward_approx,
    merge,
    nearest_token_project,
    split,
)
from .models import (
    LossHead,
    SyntheticModel,
    finite_diff_grad,
    head_grad,
    head_loss,
    load_model,
    save_model,
)
from .optimizer import (
    Objective,
    ObjectiveTerm,
    SearchConfig,
    SearchState,
    optimize,
    score_candidates,
    step,
    total_loss,
)
from .tokenization import (
    MARKER,
    UNKNOWN_TOKEN,
    TokenSeq,
    TokenizerSpec,
    WordSegmentation,
    char_tokenizer,
    detokenize,
    normalize,
    one_hot,
    read_tokenizer,
    segment_words,
    tokenize,
    train_bpe,
    write_tokenizer,
)
from .tproduct import (
    Tensor3,
    circ,
    fold,
    read_tensor3,
    tpinv,
    tprod,
    tprod_general,
    ttranspose,
    unfold,
    write_tensor3,
)
from .vocab import (
    AdapterMap,
    EmbeddingModel,
    VocabMatrix,
    VocabTensorBucket,
    build_vocab_matrix,
    build_vocab_tensors,
    collect_bucket_words,
    fit_adapter,
    read_adapter,
    write_adapter,
)

__version__ = "0.1.0"
