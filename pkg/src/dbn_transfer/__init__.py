"""Cross-corpus valence recognition with deep belief networks.

Submodules: ``features`` (WAV to functionals), ``corpus`` (labels, CSVs,
synthetic data), ``rbm`` and ``dbn`` (models), ``baselines`` (sparse
autoencoder transfer + linear SVM), ``experiments`` (protocols and suite
runner), ``cli``.
"""

from .baselines import AE_FORMAT_VERSION, SVM_FORMAT_VERSION
from .dbn import DBN_FORMAT_VERSION
from .rbm import RBM_FORMAT_VERSION

__version__ = "0.1.0"

MODEL_FORMAT_VERSIONS = {
    "rbm": RBM_FORMAT_VERSION,
    "dbn": DBN_FORMAT_VERSION,
    "ae": AE_FORMAT_VERSION,
    "ae-svm": SVM_FORMAT_VERSION,
}
