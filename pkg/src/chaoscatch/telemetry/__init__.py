"""Monitoring sidecar: journal, metrics, log evidence, behavior digests"""
