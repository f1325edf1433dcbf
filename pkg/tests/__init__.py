"""
Tests for the multipolicy-eval package
"""
