# Tests package for the phonovoc codec
