"""Counterfactual label augmentation against presentation bias."""

__version__ = "0.1.0"
