"""Song-aesthetics prediction toolkit: augmentation, features, model, training,
and the four challenge evaluation metrics."""

__version__ = "0.1.0"
