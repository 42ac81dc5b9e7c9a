"""Multimodal content-quality ranking.

Image embeddings are aggregated with NeXtVLAD, concatenated with the text
embedding and scored by a shared-weight (Siamese) MLP trained under a
pairwise cross-entropy rank loss.
"""

from .dataset_io import ContentItem, CorpusHeader, load_corpus, save_corpus, split, truncate_images
from .labeling import LabelWeights, PairSample, engagement_score, make_labels, make_pairs, rank_normalize
from .metrics import DegenerateVarianceError, EvalReport, evaluate, lcc, pairwise_accuracy
from .nextvlad import NeXtVLADConfig, nextvlad_backward, nextvlad_forward
from .ranker import RankerConfig, RankerModel, pair_loss, pair_prob, predict_batch, score, train
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"
