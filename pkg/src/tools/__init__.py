# Analysis, reports and verification
