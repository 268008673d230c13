"""Numeric core - autodiff, layers, model, scoring, filtering, evaluation."""
