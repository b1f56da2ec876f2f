"""SLIC learned image codec: inference, entropy coding and RD evaluation."""
