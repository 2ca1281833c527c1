# Run orchestration
