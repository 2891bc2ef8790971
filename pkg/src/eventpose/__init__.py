"""Egocentric 3D human pose from fisheye event streams.

End-to-end pieces: an event-camera simulator over rendered brightness
video, LNES window encoding, a recurrent heatmap/segmentation network with
3D lifting, pose metrics with Procrustes alignment, a 1-euro output
filter, and a streaming CLI.
"""

__version__ = "0.1.0"
