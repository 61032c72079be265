"""Long-document binary classification with overlapping chunks.

Documents of unbounded length are split into overlapping fixed-size
chunks, each chunk is encoded by a small transformer whose last four
layers form the chunk representation, an LSTM aggregates the chunk
sequence in order, and a logistic head yields the document probability.
The package also ships the evaluation statistics (bootstrap intervals,
Wilcoxon/Holm comparisons, length buckets) and a synthetic-corpus
generator with planted, position-controlled class signals.
"""

from .chunking import (ChunkingError, ChunkSet, EncoderWindow,
                       TokenizedDocument, Vocabulary, chunk_count,
                       chunk_document, decorate, tokenize)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, encode_batch, extract_representation
from .evaluation import (ConfusionCounts, EvaluationReport, PredictionRecord,
                         bootstrap_ci, cd_ranking, confusion, evaluate_records,
                         holm_correct, length_buckets, macro_f1, mcc,
                         wilcoxon_signed_rank)
from .numeric import AdamW, Tape, Tensor, grad_check, ops
from .pipeline import (ModelState, PipelineConfig, TrainConfig, init_model,
                       one_cycle_lr, plan_passes, predict_document, train)
from .recurrence import Prediction, RecurrenceConfig, classify, run_sequence
from .corpus import (CorpusRecord, SyntheticSpec, generate, head_truncate,
                     load_jsonl, middle_truncate)

__version__ = "0.1.0"
