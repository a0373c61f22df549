"""Services: Datensatz, Matching, Box-IoU-Head, APDI, Inferenz, Training und Auswertung."""
