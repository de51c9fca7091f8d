# Configuration and errors
