"""Loso subcommand for OccurRank"""
