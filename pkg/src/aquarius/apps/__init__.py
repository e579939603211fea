"""Applications on top of the observation store: feature extraction, traffic
classification, autoscaling and load balancing."""
