from .common import TrainingSet
from .forest import ForestModel, Tree, rf_predict, rf_train
from .modelio import load_model, save_model
from .rbfnn import RbfnnModel, rbfnn_predict, rbfnn_train
from .svm import ConvergenceWarning, SvmModel, svm_predict, svm_train

CLASSIFIERS = ("svm", "rf", "rbfnn")

__all__ = [
    "CLASSIFIERS", "ConvergenceWarning", "ForestModel", "RbfnnModel", "SvmModel", "TrainingSet", "Tree",
    "load_model", "rbfnn_predict", "rbfnn_train", "rf_predict", "rf_train", "save_model", "svm_predict",
    "svm_train",
]
