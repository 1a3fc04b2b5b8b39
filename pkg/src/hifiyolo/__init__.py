"""HIFI-YOLO style multi-signal detection on RF spectrograms."""
