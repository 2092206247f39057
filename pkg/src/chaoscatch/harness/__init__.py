"""Workloads, traces and demo targets"""
