"""Synth subcommand for OccurRank"""
