"""Feature export bridge: runs pretrained music encoders over a dataset and
writes their frame features as HEMB v1 files the hark toolkit can train on."""

__version__ = "0.1.0"
