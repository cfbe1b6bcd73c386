"""
Test package for SAEmnesia.
"""
