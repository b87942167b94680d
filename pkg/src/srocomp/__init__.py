"""Sampling rate offset estimation and compensation for wireless stereo playback."""

__version__ = "0.1.0"
