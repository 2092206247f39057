"""Experiment orchestration: observation, exploration and falsification"""
