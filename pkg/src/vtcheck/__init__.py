"""Cross-modal consistency checking for short video posts."""

from .corpus import Corpus, CorpusSplit, VideoPost, dedup_by_video, filter_verifiable, ingest, serialize, split
from .encoders import EncoderConfig, FramePatchFeatures, StubFrameEncoder, StubTextEncoder, TokenEmbeddings, sample_frames
from .events import EventStructure, LexiconEventTagger, Span, tag_events, to_alert_indices
from .model import ConsistencyModel, Featurizer, ModelConfig, PairScores, Verdict, explain, load_checkpoint, save_checkpoint
from .synthesis import build_balanced_dataset, default_stub_suite
from .train_eval import TrainConfig, evaluate, finite_difference_check, train

__version__ = "0.1.0"
