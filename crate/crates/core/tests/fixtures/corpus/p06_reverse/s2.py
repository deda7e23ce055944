s = input()
r = ""
for c in s:
    r = c + r
print(r)
