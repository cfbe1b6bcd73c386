"""
Command handlers for SAEmnesia.
"""
