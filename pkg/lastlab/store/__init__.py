# Store module
