"""Train subcommand for OccurRank"""
