"""
Utility modules for SAEmnesia.
"""
