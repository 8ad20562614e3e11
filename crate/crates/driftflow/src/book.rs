// Doctest anchors for the guide chapters; filled in with the book.
