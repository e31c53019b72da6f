"""Operations of the monitored circuit lab, grouped by concern."""
