# Run artifacts
